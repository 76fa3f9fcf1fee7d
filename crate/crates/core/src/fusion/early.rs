use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::representation::{concat_features, Representation, RepresentationSpec};
use crate::dataset::ModalBatch;
use crate::error::{Error, Result};
use crate::nn::{train_mlp, Activation, Architecture, Differentiable, MlpParams, Optimizer, TrainConfig};
use crate::pipeline::{fit_scaler, Scaler, ScalerKind};
use crate::prob::ProbabilityMatrix;

/// A trainable prediction head and its optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    /// 0 means full batch.
    #[serde(default)]
    pub batch_size: usize,
}

impl HeadSpec {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            seed,
            optimizer: Optimizer::adam(),
        }
    }
}

/// Frozen representations, concatenated and standardized, feeding an MLP head.
///
/// An imaging model is the special case of a single embedding representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyFusionModel {
    pub representations: Vec<Representation>,
    pub scaler: Scaler,
    pub head: MlpParams,
}

pub fn fit_early_fusion(
    train: &ModalBatch,
    y: &[usize],
    n_classes: usize,
    representations: &[RepresentationSpec],
    head: &HeadSpec,
    seed: u64,
) -> Result<EarlyFusionModel> {
    if representations.is_empty() {
        return Err(Error::InvalidConfig("early fusion needs at least one representation".into()));
    }
    let reps = representations
        .iter()
        .map(|s| Representation::fit(s, train))
        .collect::<Result<Vec<_>>>()?;
    let raw = concat_features(&reps, train)?;
    let scaler = fit_scaler(&raw, ScalerKind::Standard);
    let z = scaler.transform(&raw)?;
    let arch = Architecture::new(z.ncols(), &head.hidden, n_classes, head.activation);
    let params = train_mlp(&z, y, &arch, &head.train_config(seed))?;
    Ok(EarlyFusionModel {
        representations: reps,
        scaler,
        head: params,
    })
}

impl EarlyFusionModel {
    /// Concatenated representation before standardization.
    pub fn raw_features(&self, batch: &ModalBatch) -> Result<Array2<f64>> {
        concat_features(&self.representations, batch)
    }

    pub fn predict_proba(&self, batch: &ModalBatch) -> Result<ProbabilityMatrix> {
        self.predict_from_features(&self.raw_features(batch)?)
    }

    pub fn predict_from_features(&self, raw: &Array2<f64>) -> Result<ProbabilityMatrix> {
        self.head.predict_proba(&self.scaler.transform(raw)?)
    }

    /// Integrated-gradients baseline: the training mean on tabular blocks,
    /// zero on embedding blocks.
    pub fn default_baseline(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.scaler.offset.len()];
        for (rep, range) in self.representations.iter().zip(self.blocks()) {
            if rep.is_tabular() {
                out[range.clone()].copy_from_slice(&self.scaler.offset[range]);
            }
        }
        out
    }

    /// Column ranges of each representation within the concatenation.
    pub fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.representations
            .iter()
            .map(|r| {
                start += r.width;
                start - r.width..start
            })
            .collect()
    }
}

/// Differentiates the target probability with respect to the unstandardized
/// concatenated representation.
impl Differentiable for EarlyFusionModel {
    fn input_width(&self) -> usize {
        self.scaler.factor.len()
    }

    fn values_and_gradients(&self, xs: &Array2<f64>, target: usize) -> Result<(Vec<f64>, Array2<f64>)> {
        let z = self.scaler.transform(xs)?;
        let (values, mut grads) = self.head.values_and_gradients(&z, target)?;
        for mut row in grads.rows_mut() {
            row.iter_mut().zip(&self.scaler.factor).for_each(|(g, f)| *g *= f);
        }
        Ok((values, grads))
    }

    fn default_target(&self, x: &[f64]) -> Result<usize> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| Error::shape(self.input_width(), e))?;
        Ok(self.predict_from_features(&row)?.argmax()[0])
    }

    fn kink_levels(&self, xs: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        self.head.kink_levels(&self.scaler.transform(xs)?)
    }
}
