//! Split conformal prediction with regularized adaptive prediction sets
//! (non-randomized) and the selective-acquisition experiment built on them.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::ProbabilityMatrix;
use crate::rng::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub k_reg: usize,
    /// Always false: sets are deterministic.
    #[serde(default)]
    pub randomized: bool,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            lambda: 0.01,
            k_reg: 2,
            randomized: false,
        }
    }
}

impl ConformalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.lambda >= 0.0) || self.k_reg == 0 || self.randomized {
            return Err(Error::InvalidConfig(format!(
                "conformal config needs 0 < alpha < 1, lambda >= 0, k_reg >= 1, randomized = false: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibration {
    pub config: ConformalConfig,
    /// `+∞` when the calibration set is too small for the requested level.
    #[serde(with = "tau_serde")]
    pub tau: f64,
    pub n_cal: usize,
}

/// JSON has no infinity; `+∞` is written as `null`.
mod tau_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tau: &f64, s: S) -> Result<S::Ok, S::Error> {
        if tau.is_finite() {
            s.serialize_f64(*tau)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn check_row(p: &[f64], row: usize) -> Result<()> {
    let invalid = |reason: String| Error::InvalidProbability { row, reason };
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid("negative or non-finite entry".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("sums to {sum}")));
    }
    Ok(())
}

/// Class indices by decreasing probability; ties keep the lower index first.
fn descending_order(p: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order
}

/// Compensated (Neumaier) running sums of `values`.
fn cumulative_sums(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    values
        .map(|v| {
            let t = sum + v;
            if sum.abs() >= v.abs() {
                comp += (sum - t) + v;
            } else {
                comp += (v - t) + sum;
            }
            sum = t;
            sum + comp
        })
        .collect()
}

/// RAPS scores of every label for one row: mass up to and including the
/// label's rank plus `λ·max(0, rank − k_reg)`.
fn all_scores(p: &[f64], lambda: f64, k_reg: usize) -> Vec<f64> {
    let order = descending_order(p);
    let cum = cumulative_sums(order.iter().map(|&c| p[c]));
    let mut scores = vec![0.0; p.len()];
    for (rank0, &c) in order.iter().enumerate() {
        let rank = rank0 + 1;
        scores[c] = cum[rank0] + lambda * rank.saturating_sub(k_reg) as f64;
    }
    scores
}

pub fn raps_score(p: &[f64], y: usize, lambda: f64, k_reg: usize) -> Result<f64> {
    check_row(p, 0)?;
    if y >= p.len() {
        return Err(Error::shape(format!("label below {}", p.len()), y));
    }
    Ok(all_scores(p, lambda, k_reg)[y])
}

/// The `⌈(n+1)(1−α)⌉`-th smallest score, or `+∞` past the end.
pub fn calibrate(scores: &[f64], alpha: f64) -> f64 {
    let n = scores.len();
    // Guard the ceiling against representation error, e.g. 10·0.9 = 9.000…01.
    let index = ((((n + 1) as f64) * (1.0 - alpha) - 1e-9).ceil() as usize).max(1);
    if index > n {
        return f64::INFINITY;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[index - 1]
}

/// Calibrates on predicted probabilities and true labels.
pub fn calibrate_predictions(
    probs: &ProbabilityMatrix,
    y: &[usize],
    config: ConformalConfig,
) -> Result<ConformalCalibration> {
    config.validate()?;
    if y.len() != probs.n_rows() {
        return Err(Error::LengthMismatch {
            left: probs.n_rows(),
            right: y.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidConfig("empty calibration set".into()));
    }
    let scores = y
        .iter()
        .enumerate()
        .map(|(i, &yi)| {
            let row = probs.row(i).to_vec();
            check_row(&row, i)?;
            Ok(all_scores(&row, config.lambda, config.k_reg)[yi])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConformalCalibration {
        config,
        tau: calibrate(&scores, config.alpha),
        n_cal: y.len(),
    })
}

/// All labels whose score is at most `τ`, in increasing class order.
pub fn predict_set(p: &[f64], calibration: &ConformalCalibration) -> Result<Vec<usize>> {
    check_row(p, 0)?;
    if calibration.tau == f64::INFINITY {
        return Ok((0..p.len()).collect());
    }
    let scores = all_scores(p, calibration.config.lambda, calibration.config.k_reg);
    Ok((0..p.len()).filter(|&c| scores[c] <= calibration.tau).collect())
}

pub fn predict_sets(probs: &ProbabilityMatrix, calibration: &ConformalCalibration) -> Result<Vec<Vec<usize>>> {
    (0..probs.n_rows())
        .map(|i| {
            predict_set(&probs.row(i).to_vec(), calibration).map_err(|e| match e {
                Error::InvalidProbability { reason, .. } => Error::InvalidProbability { row: i, reason },
                other => other,
            })
        })
        .collect()
}

pub fn coverage(sets: &[Vec<usize>], labels: &[usize]) -> Result<f64> {
    if sets.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: sets.len(),
            right: labels.len(),
        });
    }
    if sets.is_empty() {
        return Err(Error::UndefinedMetric("coverage of an empty set".into()));
    }
    let hits = sets.iter().zip(labels).filter(|(s, y)| s.contains(y)).count();
    Ok(hits as f64 / sets.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionPolicy {
    Uncertainty,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionCurve {
    pub policy: AcquisitionPolicy,
    /// `(fraction acquired, metric)` in increasing fraction order.
    pub points: Vec<(f64, f64)>,
}

impl AcquisitionCurve {
    pub fn at(&self, fraction: f64) -> Option<f64> {
        self.points.iter().find(|(u, _)| (*u - fraction).abs() < 1e-12).map(|p| p.1)
    }
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    let increasing = grid.windows(2).all(|w| w[0] < w[1]);
    if !increasing || grid.first() != Some(&0.0) || grid.last() != Some(&1.0) {
        return Err(Error::InvalidConfig(format!(
            "fraction grid must increase strictly from 0 to 1: {grid:?}"
        )));
    }
    Ok(())
}

/// Acquisition order: largest tabular prediction set first, then lowest top
/// probability, then lowest index.
pub fn uncertainty_order(tabular: &ProbabilityMatrix, calibration: &ConformalCalibration) -> Result<Vec<usize>> {
    let sets = predict_sets(tabular, calibration)?;
    let top: Vec<f64> = (0..tabular.n_rows())
        .map(|i| tabular.row(i).fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
        .collect();
    let mut order: Vec<usize> = (0..tabular.n_rows()).collect();
    order.sort_by(|&a, &b| {
        sets[b]
            .len()
            .cmp(&sets[a].len())
            .then(top[a].total_cmp(&top[b]))
            .then(a.cmp(&b))
    });
    Ok(order)
}

/// Metric of the hybrid predictor that uses multimodal predictions for the
/// first `⌈u·n⌉` samples of the policy's order and tabular ones elsewhere.
#[allow(clippy::too_many_arguments)]
pub fn acquisition_curve(
    tabular: &ProbabilityMatrix,
    multimodal: &ProbabilityMatrix,
    y: &[usize],
    calibration: &ConformalCalibration,
    grid: &[f64],
    policy: AcquisitionPolicy,
    seed: u64,
    metric: impl Fn(&ProbabilityMatrix, &[usize]) -> Result<f64>,
) -> Result<AcquisitionCurve> {
    check_grid(grid)?;
    let n = tabular.n_rows();
    if multimodal.as_array().dim() != tabular.as_array().dim() {
        return Err(Error::shape(
            format!("{:?}", tabular.as_array().dim()),
            format!("{:?}", multimodal.as_array().dim()),
        ));
    }
    if y.len() != n {
        return Err(Error::LengthMismatch { left: n, right: y.len() });
    }
    let order = match policy {
        AcquisitionPolicy::Uncertainty => uncertainty_order(tabular, calibration)?,
        AcquisitionPolicy::Random => {
            let mut o: Vec<usize> = (0..n).collect();
            o.shuffle(&mut rng(seed));
            o
        }
    };
    let points = grid
        .iter()
        .map(|&u| {
            let m = ((u * n as f64) - 1e-9).ceil().max(0.0) as usize;
            let mut hybrid = tabular.as_array().clone();
            for &i in &order[..m.min(n)] {
                hybrid.row_mut(i).assign(&multimodal.row(i));
            }
            Ok((u, metric(&ProbabilityMatrix::new(hybrid)?, y)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AcquisitionCurve { policy, points })
}
