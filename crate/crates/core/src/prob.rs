//! Row-stochastic prediction matrices.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities below this are clipped when scoring log-loss.
pub const LOG_LOSS_EPS: f64 = 1e-15;

/// An n×C matrix whose rows lie on the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbabilityMatrix(Array2<f64>);

impl ProbabilityMatrix {
    /// Validates that every row is nonnegative and sums to one within 1e-6.
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (row, p) in probs.outer_iter().enumerate() {
            check_row(p).map_err(|reason| Error::InvalidProbability { row, reason })?;
        }
        Ok(Self(probs))
    }

    pub fn from_logits(logits: &Array2<f64>) -> Self {
        Self(softmax_rows(logits))
    }

    pub(crate) fn from_array_unchecked(probs: Array2<f64>) -> Self {
        Self(probs)
    }

    /// Uniform predictions over `n_classes`.
    pub fn uniform(n_rows: usize, n_classes: usize) -> Self {
        Self(Array2::from_elem((n_rows, n_classes), 1.0 / n_classes as f64))
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    pub fn n_rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    /// Predicted labels; ties go to the lower class index.
    pub fn argmax(&self) -> Vec<usize> {
        self.0.outer_iter().map(|r| argmax(r.as_slice().unwrap_or(&r.to_vec()))).collect()
    }

    /// Mean negative log-likelihood of `labels`, probabilities clipped at 1e-15.
    pub fn log_loss(&self, labels: &[usize]) -> Result<f64> {
        if labels.len() != self.n_rows() {
            return Err(Error::LengthMismatch {
                left: self.n_rows(),
                right: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::UndefinedMetric("log-loss of an empty set".into()));
        }
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -self.0[[i, y]].max(LOG_LOSS_EPS).ln())
            .sum();
        Ok(total / labels.len() as f64)
    }

    /// Selects a subset of rows.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self(self.0.select(Axis(0), rows))
    }

    /// Convex combination Σ wᵢ·Pᵢ of equally shaped matrices.
    pub fn mix(members: &[&ProbabilityMatrix], weights: &[f64]) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidConfig("mixture needs at least one member".into()))?;
        if members.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: members.len(),
                right: weights.len(),
            });
        }
        let shape = first.0.dim();
        let mut out = Array2::zeros(shape);
        for (m, &w) in members.iter().zip(weights) {
            if m.0.dim() != shape {
                return Err(Error::shape(format!("{shape:?}"), format!("{:?}", m.0.dim())));
            }
            out.scaled_add(w, &m.0);
        }
        Ok(Self(out))
    }
}

fn check_row(p: ArrayView1<'_, f64>) -> std::result::Result<(), String> {
    if p.iter().any(|v| !v.is_finite() || *v < -1e-12) {
        return Err("negative or non-finite entry".into());
    }
    let s = p.sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(format!("row sums to {s}"));
    }
    Ok(())
}

/// Index of the largest value; the first index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}
