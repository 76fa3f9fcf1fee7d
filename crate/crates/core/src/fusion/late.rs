use serde::{Deserialize, Serialize};

use super::FittedPredictor;
use crate::dataset::ModalBatch;
use crate::error::{Error, Result};
use crate::prob::ProbabilityMatrix;
use crate::search::{optimize_simplex_weights, SimplexFit};

/// Scalar simplex weights over member predictors. Late fusion uses one
/// member per modality; the same structure holds strategy ensembles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedEnsemble {
    pub members: Vec<FittedPredictor>,
    pub weights: Vec<f64>,
}

pub type LateFusionModel = WeightedEnsemble;

fn check_simplex(weights: &[f64]) -> Result<()> {
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("weights {weights:?} are not on the simplex")));
    }
    Ok(())
}

/// `Σ wᵢ·Pᵢ` over member predictions.
pub fn predict_late(weights: &[f64], members: &[ProbabilityMatrix]) -> Result<ProbabilityMatrix> {
    check_simplex(weights)?;
    let refs: Vec<&ProbabilityMatrix> = members.iter().collect();
    ProbabilityMatrix::mix(&refs, weights)
}

/// Late-fusion weights minimizing validation log-loss.
pub fn fit_late_fusion(
    member_valid: &[ProbabilityMatrix],
    y_valid: &[usize],
    budget: usize,
    seed: u64,
) -> Result<SimplexFit> {
    let refs: Vec<&ProbabilityMatrix> = member_valid.iter().collect();
    optimize_simplex_weights(&refs, y_valid, budget, seed)
}

impl WeightedEnsemble {
    pub fn new(members: Vec<FittedPredictor>, weights: Vec<f64>) -> Result<Self> {
        if members.len() != weights.len() || members.is_empty() {
            return Err(Error::LengthMismatch {
                left: members.len(),
                right: weights.len(),
            });
        }
        check_simplex(&weights)?;
        Ok(Self { members, weights })
    }

    /// Members with zero weight are not evaluated.
    pub fn predict_proba(&self, batch: &ModalBatch) -> Result<ProbabilityMatrix> {
        let mut probs = Vec::new();
        let mut weights = Vec::new();
        for (m, &w) in self.members.iter().zip(&self.weights) {
            if w > 0.0 {
                probs.push(m.predict_proba(batch)?);
                weights.push(w);
            }
        }
        let refs: Vec<&ProbabilityMatrix> = probs.iter().collect();
        ProbabilityMatrix::mix(&refs, &weights)
    }
}
