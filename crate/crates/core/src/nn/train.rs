use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{Architecture, MlpGrads, MlpParams};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 0,
            weight_decay: 0.0,
            seed: 0,
            optimizer: Optimizer::adam(),
        }
    }
}

impl TrainConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, epochs >= 1 and weight decay >= 0 (got {}, {}, {})",
                self.learning_rate, self.epochs, self.weight_decay
            )));
        }
        Ok(())
    }

    /// Row batches for one epoch; full batch keeps the natural order.
    pub(crate) fn batches(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        if self.batch_size == 0 || self.batch_size >= n {
            return vec![order];
        }
        order.shuffle(&mut rng(derive_seed(self.seed, &[0xBA7C, epoch as u64])));
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Optimizer moments, one slot per parameter buffer.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    optimizer: Optimizer,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer) -> Self {
        Self {
            optimizer,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Advances the shared step counter; call once per parameter update.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, slot: usize, param: &mut [f64], grad: &[f64], lr: f64) {
        match self.optimizer {
            Optimizer::Sgd => {
                for (p, g) in param.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                while self.first.len() <= slot {
                    self.first.push(Vec::new());
                    self.second.push(Vec::new());
                }
                if self.first[slot].len() != param.len() {
                    self.first[slot] = vec![0.0; param.len()];
                    self.second[slot] = vec![0.0; param.len()];
                }
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
                for i in 0..param.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    param[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Applies one optimizer update to every layer of `params`, using slots
/// `first_slot..first_slot + 2·layers`. Weight decay adds `wd·W` to the
/// weight gradients (biases are not decayed).
pub(crate) fn apply_update(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut OptimizerState,
    first_slot: usize,
    lr: f64,
    weight_decay: f64,
) {
    for (l, (layer, grad)) in params.layers.iter_mut().zip(&grads.layers).enumerate() {
        let mut gw = grad.weights.clone();
        if weight_decay > 0.0 {
            gw.scaled_add(weight_decay, &layer.weights);
        }
        state.update(
            first_slot + 2 * l,
            layer.weights.as_slice_mut().expect("standard layout"),
            gw.as_slice().expect("standard layout"),
            lr,
        );
        state.update(
            first_slot + 2 * l + 1,
            layer.bias.as_slice_mut().expect("standard layout"),
            grad.bias.as_slice().expect("standard layout"),
            lr,
        );
    }
}

/// Losses this many times above the starting loss count as blown up even
/// while still finite (a dead ReLU network can sit at a huge constant loss).
const DIVERGENCE_FACTOR: f64 = 1e8;

pub(crate) fn diverged(loss: f64, initial_loss: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial_loss.max(1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

pub(crate) fn check_labels(y: &[usize], n_rows: usize, n_classes: usize) -> Result<()> {
    if y.len() != n_rows {
        return Err(Error::LengthMismatch {
            left: n_rows,
            right: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&v| v >= n_classes) {
        return Err(Error::shape(format!("labels below {n_classes}"), bad));
    }
    let first = y.first().copied();
    if y.iter().all(|&v| Some(v) == first) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Trains a freshly initialized network of shape `arch` on `(x, y)`.
pub fn train_mlp(x: &Array2<f64>, y: &[usize], arch: &Architecture, config: &TrainConfig) -> Result<MlpParams> {
    if arch.input != x.ncols() {
        return Err(Error::shape(format!("{} input columns", arch.input), x.ncols()));
    }
    let init = MlpParams::init(arch, derive_seed(config.seed, &[0x1417]));
    train_mlp_from(init, x, y, config).map(|(p, _)| p)
}

/// Trains starting from the given parameters, minimizing mean cross-entropy.
pub fn train_mlp_from(
    mut params: MlpParams,
    x: &Array2<f64>,
    y: &[usize],
    config: &TrainConfig,
) -> Result<(MlpParams, TrainHistory)> {
    config.validate()?;
    check_labels(y, x.nrows(), params.output_width())?;
    let (initial_loss, _, _) = params.gradients(x, y)?;
    let mut state = OptimizerState::new(config.optimizer);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let batches = config.batches(x.nrows(), epoch);
        let mut total = 0.0;
        for rows in &batches {
            let (loss, grads, _) = if rows.len() == x.nrows() {
                params.gradients(x, y)?
            } else {
                let xb = x.select(Axis(0), rows);
                let yb: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
                params.gradients(&xb, &yb)?
            };
            if diverged(loss, initial_loss) {
                return Err(Error::Divergence { epoch });
            }
            total += loss;
            state.begin_step();
            apply_update(&mut params, &grads, &mut state, 0, config.learning_rate, config.weight_decay);
        }
        if !params.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        epoch_losses.push(total / batches.len() as f64);
    }
    let (final_loss, _, _) = params.gradients(x, y)?;
    if diverged(final_loss, initial_loss) {
        return Err(Error::Divergence {
            epoch: config.epochs,
        });
    }
    Ok((
        params,
        TrainHistory {
            initial_loss,
            final_loss,
            epoch_losses,
        },
    ))
}
