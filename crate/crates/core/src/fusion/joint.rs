//! Joint fusion: per-modality branch networks whose activated outputs are
//! concatenated into a prediction head, all trained together.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::early::HeadSpec;
use super::representation::{Representation, RepresentationSpec};
use crate::dataset::ModalBatch;
use crate::error::{Error, Result};
use crate::nn::{
    apply_update, check_labels, cross_entropy_grad, diverged, probability_gradient, Activation, Architecture,
    Differentiable, ForwardCache, MlpGrads, MlpParams, OptimizerState, TrainHistory,
};
use crate::pipeline::{fit_scaler, Scaler, ScalerKind};
use crate::prob::ProbabilityMatrix;
use crate::rng::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub representation: RepresentationSpec,
    pub hidden: Vec<usize>,
    pub output: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub branches: Vec<BranchSpec>,
    pub head: HeadSpec,
    /// Branch learning rate relative to the head's.
    #[serde(default = "one")]
    pub branch_lr_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub representation: Representation,
    pub scaler: Scaler,
    /// Its last layer's output passes through the activation before concatenation.
    pub net: MlpParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointFusionModel {
    pub branches: Vec<Branch>,
    pub head: MlpParams,
    /// Gradient norm of every branch on the first training batch.
    pub first_step_branch_grad_norms: Vec<f64>,
}

pub struct JointGrads {
    pub branches: Vec<MlpGrads>,
    pub head: MlpGrads,
    /// Gradient with respect to each branch's standardized input.
    pub inputs: Vec<Array2<f64>>,
}

struct JointCache {
    branches: Vec<ForwardCache>,
    head: ForwardCache,
}

fn grad_norm(g: &MlpGrads) -> f64 {
    g.layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

impl JointFusionModel {
    /// Fits representations and standardizers and draws initial weights.
    pub fn init(spec: &JointSpec, train: &ModalBatch, n_classes: usize, seed: u64) -> Result<Self> {
        if spec.branches.is_empty() {
            return Err(Error::InvalidConfig("joint fusion needs at least one branch".into()));
        }
        let act = spec.head.activation;
        let mut branches = Vec::with_capacity(spec.branches.len());
        for (b, bs) in spec.branches.iter().enumerate() {
            if bs.output == 0 {
                return Err(Error::InvalidConfig("branch output width must be positive".into()));
            }
            let representation = Representation::fit(&bs.representation, train)?;
            let scaler = fit_scaler(&representation.extract(train)?, ScalerKind::Standard);
            let arch = Architecture::new(representation.width, &bs.hidden, bs.output, act);
            branches.push(Branch {
                representation,
                scaler,
                net: MlpParams::init(&arch, derive_seed(seed, &[0xB2A4, b as u64])),
            });
        }
        let width: usize = spec.branches.iter().map(|b| b.output).sum();
        let head = MlpParams::init(
            &Architecture::new(width, &spec.head.hidden, n_classes, act),
            derive_seed(seed, &[0x4EAD]),
        );
        Ok(Self {
            branches,
            head,
            first_step_branch_grad_norms: Vec::new(),
        })
    }

    fn activation(&self) -> Activation {
        self.head.activation
    }

    /// Standardized input of every branch.
    pub fn branch_inputs(&self, batch: &ModalBatch) -> Result<Vec<Array2<f64>>> {
        self.branches
            .iter()
            .map(|b| b.scaler.transform(&b.representation.extract(batch)?))
            .collect()
    }

    /// Concatenated unstandardized branch representations, the input space
    /// of the [`Differentiable`] implementation.
    pub fn raw_features(&self, batch: &ModalBatch) -> Result<Array2<f64>> {
        let raw = self
            .branches
            .iter()
            .map(|b| b.representation.extract(batch))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = raw.iter().map(|r| r.view()).collect();
        ndarray::concatenate(Axis(1), &views).map_err(|e| Error::shape("equal row counts", e))
    }

    fn forward(&self, inputs: &[Array2<f64>]) -> Result<JointCache> {
        let act = self.activation();
        let branches = self
            .branches
            .iter()
            .zip(inputs)
            .map(|(b, x)| b.net.forward_cached(x))
            .collect::<Result<Vec<_>>>()?;
        let outs: Vec<Array2<f64>> = branches.iter().map(|c| c.logits.mapv(|v| act.apply(v))).collect();
        let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
        let h = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::shape("equal row counts", e))?;
        let head = self.head.forward_cached(&h)?;
        Ok(JointCache { branches, head })
    }

    /// Concatenated activated branch outputs: the head's input.
    pub fn branch_features(&self, inputs: &[Array2<f64>]) -> Result<Array2<f64>> {
        let act = self.activation();
        let outs = self
            .branches
            .iter()
            .zip(inputs)
            .map(|(b, x)| Ok(b.net.forward_cached(x)?.logits.mapv(|v| act.apply(v))))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
        ndarray::concatenate(Axis(1), &views).map_err(|e| Error::shape("equal row counts", e))
    }

    fn backward(&self, cache: &JointCache, grad_logits: &Array2<f64>) -> JointGrads {
        let act = self.activation();
        let (head, g_h) = self.head.backward(&cache.head, grad_logits);
        let mut start = 0;
        let mut branches = Vec::with_capacity(self.branches.len());
        let mut inputs = Vec::with_capacity(self.branches.len());
        for (b, c) in self.branches.iter().zip(&cache.branches) {
            let w = b.net.output_width();
            let mut g = g_h.slice(s![.., start..start + w]).to_owned();
            g.zip_mut_with(&c.logits, |gi, &z| *gi *= act.derivative(z));
            let (grads, g_in) = b.net.backward(c, &g);
            branches.push(grads);
            inputs.push(g_in);
            start += w;
        }
        JointGrads { branches, head, inputs }
    }

    /// Mean cross-entropy and gradients for standardized branch inputs.
    pub fn gradients(&self, inputs: &[Array2<f64>], y: &[usize]) -> Result<(f64, JointGrads)> {
        if inputs.len() != self.branches.len() {
            return Err(Error::shape(self.branches.len(), inputs.len()));
        }
        let cache = self.forward(inputs)?;
        if y.len() != cache.head.logits.nrows() {
            return Err(Error::LengthMismatch {
                left: cache.head.logits.nrows(),
                right: y.len(),
            });
        }
        let (loss, grad_logits) = cross_entropy_grad(&cache.head.logits, y)?;
        Ok((loss, self.backward(&cache, &grad_logits)))
    }

    pub fn predict_inputs(&self, inputs: &[Array2<f64>]) -> Result<ProbabilityMatrix> {
        Ok(ProbabilityMatrix::from_logits(&self.forward(inputs)?.head.logits))
    }

    pub fn predict_proba(&self, batch: &ModalBatch) -> Result<ProbabilityMatrix> {
        self.predict_inputs(&self.branch_inputs(batch)?)
    }

    pub fn input_widths(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.representation.width).collect()
    }

    /// Splits a row-concatenation of raw representations into standardized
    /// branch inputs.
    /// Integrated-gradients baseline over the concatenated raw branch
    /// inputs: the training mean on tabular branches, zero on embeddings.
    pub fn default_baseline(&self) -> Vec<f64> {
        self.branches
            .iter()
            .flat_map(|b| {
                if b.representation.is_tabular() {
                    b.scaler.offset.clone()
                } else {
                    vec![0.0; b.scaler.offset.len()]
                }
            })
            .collect()
    }

    fn split_raw(&self, xs: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        if xs.ncols() != self.input_widths().iter().sum::<usize>() {
            return Err(Error::shape(self.input_widths().iter().sum::<usize>(), xs.ncols()));
        }
        let mut start = 0;
        self.branches
            .iter()
            .map(|b| {
                let w = b.representation.width;
                let part = xs.slice(s![.., start..start + w]).to_owned();
                start += w;
                b.scaler.transform(&part)
            })
            .collect()
    }

    /// Trains branches and head together with Adam; branch steps use
    /// `branch_lr_scale × lr`.
    pub fn train(
        mut self,
        train: &ModalBatch,
        y: &[usize],
        spec: &JointSpec,
        seed: u64,
    ) -> Result<(Self, TrainHistory)> {
        let config = spec.head.train_config(seed);
        config.validate()?;
        check_labels(y, train.n_rows(), self.head.output_width())?;
        let inputs = self.branch_inputs(train)?;
        let (initial_loss, _) = self.gradients(&inputs, y)?;
        let mut state = OptimizerState::new(config.optimizer);
        let head_slots = 2 * self.head.layers.len();
        let branch_lr = config.learning_rate * spec.branch_lr_scale;
        let mut epoch_losses = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            let batches = config.batches(y.len(), epoch);
            let mut total = 0.0;
            for rows in &batches {
                let (loss, grads) = if rows.len() == y.len() {
                    self.gradients(&inputs, y)?
                } else {
                    let xb: Vec<Array2<f64>> = inputs.iter().map(|x| x.select(Axis(0), rows)).collect();
                    let yb: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
                    self.gradients(&xb, &yb)?
                };
                if diverged(loss, initial_loss) {
                    return Err(Error::Divergence { epoch });
                }
                if self.first_step_branch_grad_norms.is_empty() {
                    self.first_step_branch_grad_norms = grads.branches.iter().map(grad_norm).collect();
                }
                total += loss;
                state.begin_step();
                apply_update(&mut self.head, &grads.head, &mut state, 0, config.learning_rate, config.weight_decay);
                let mut slot = head_slots;
                for (b, g) in self.branches.iter_mut().zip(&grads.branches) {
                    apply_update(&mut b.net, g, &mut state, slot, branch_lr, config.weight_decay);
                    slot += 2 * b.net.layers.len();
                }
            }
            if !self.head.is_finite() || !self.branches.iter().all(|b| b.net.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            epoch_losses.push(total / batches.len() as f64);
        }
        let (final_loss, _) = self.gradients(&inputs, y)?;
        if diverged(final_loss, initial_loss) {
            return Err(Error::Divergence {
                epoch: config.epochs,
            });
        }
        Ok((
            self,
            TrainHistory {
                initial_loss,
                final_loss,
                epoch_losses,
            },
        ))
    }
}

pub fn fit_joint_fusion(
    train: &ModalBatch,
    y: &[usize],
    n_classes: usize,
    spec: &JointSpec,
    seed: u64,
) -> Result<JointFusionModel> {
    let model = JointFusionModel::init(spec, train, n_classes, seed)?;
    Ok(model.train(train, y, spec, seed)?.0)
}

/// Differentiates the target probability with respect to the concatenation
/// of the raw (unstandardized) branch representations.
impl Differentiable for JointFusionModel {
    fn input_width(&self) -> usize {
        self.input_widths().iter().sum()
    }

    fn values_and_gradients(&self, xs: &Array2<f64>, target: usize) -> Result<(Vec<f64>, Array2<f64>)> {
        if target >= self.head.output_width() {
            return Err(Error::shape(format!("target below {}", self.head.output_width()), target));
        }
        let inputs = self.split_raw(xs)?;
        let cache = self.forward(&inputs)?;
        let (values, grad_logits) = probability_gradient(&cache.head.logits, target);
        let grads = self.backward(&cache, &grad_logits);
        let scaled: Vec<Array2<f64>> = grads
            .inputs
            .iter()
            .zip(&self.branches)
            .map(|(g, b)| {
                let mut g = g.clone();
                for mut row in g.rows_mut() {
                    row.iter_mut().zip(&b.scaler.factor).for_each(|(v, f)| *v *= f);
                }
                g
            })
            .collect();
        let views: Vec<_> = scaled.iter().map(|g| g.view()).collect();
        let grads = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::shape("equal row counts", e))?;
        Ok((values, grads))
    }

    fn default_target(&self, x: &[f64]) -> Result<usize> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| Error::shape(self.input_width(), e))?;
        Ok(self.predict_inputs(&self.split_raw(&row)?)?.argmax()[0])
    }

    /// Level `k` holds every branch's `k`-th ReLU level (hidden layers, then
    /// the activated branch output); head levels follow the deepest branch.
    fn kink_levels(&self, xs: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        if self.activation() != Activation::Relu {
            return Ok(Vec::new());
        }
        let cache = self.forward(&self.split_raw(xs)?)?;
        let branch_levels: Vec<Vec<&Array2<f64>>> = cache
            .branches
            .iter()
            .map(|c| c.pre.iter().chain([&c.logits]).collect())
            .collect();
        let depth = branch_levels.iter().map(Vec::len).max().unwrap_or(0);
        let mut levels = Vec::with_capacity(depth + cache.head.pre.len());
        for k in 0..depth {
            let views: Vec<_> = branch_levels.iter().filter_map(|l| l.get(k)).map(|a| a.view()).collect();
            levels.push(ndarray::concatenate(Axis(1), &views).map_err(|e| Error::shape("equal row counts", e))?);
        }
        levels.extend(cache.head.pre);
        Ok(levels)
    }
}
