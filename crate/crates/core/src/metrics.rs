//! Classification metrics and permutation importance.

use std::collections::BTreeMap;

use ndarray::{s, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{ModalBatch, Task};
use crate::error::{Error, Result};
use crate::prob::ProbabilityMatrix;
use crate::rng::{derive_seed, rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    pub mcc: f64,
}

/// `counts[t][p]`: samples of true class t predicted as p.
pub fn confusion_matrix(predicted: &[usize], truth: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    let mut counts = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::shape(format!("labels below {n_classes}"), p.max(t)));
        }
        counts[t][p] += 1;
    }
    Ok(counts)
}

/// Accuracy, balanced accuracy (mean recall over classes present in the
/// truth), macro F1 (classes neither present nor predicted are skipped) and
/// the multiclass MCC, defined as 0 when its denominator vanishes.
pub fn confusion_metrics(predicted: &[usize], truth: &[usize], n_classes: usize) -> Result<ConfusionMetrics> {
    let cm = confusion_matrix(predicted, truth, n_classes)?;
    let n = truth.len();
    if n == 0 {
        return Err(Error::UndefinedMetric("no samples".into()));
    }
    let true_counts: Vec<usize> = cm.iter().map(|r| r.iter().sum()).collect();
    let pred_counts: Vec<usize> = (0..n_classes).map(|p| cm.iter().map(|r| r[p]).sum()).collect();
    let correct: usize = (0..n_classes).map(|k| cm[k][k]).sum();

    let recalls: Vec<f64> = (0..n_classes)
        .filter(|&k| true_counts[k] > 0)
        .map(|k| cm[k][k] as f64 / true_counts[k] as f64)
        .collect();
    let f1s: Vec<f64> = (0..n_classes)
        .filter(|&k| true_counts[k] > 0 || pred_counts[k] > 0)
        .map(|k| 2.0 * cm[k][k] as f64 / (true_counts[k] + pred_counts[k]) as f64)
        .collect();

    let (c, s) = (correct as f64, n as f64);
    let pt: f64 = (0..n_classes).map(|k| pred_counts[k] as f64 * true_counts[k] as f64).sum();
    let pp: f64 = pred_counts.iter().map(|&p| (p * p) as f64).sum();
    let tt: f64 = true_counts.iter().map(|&t| (t * t) as f64).sum();
    let denom = ((s * s - pp) * (s * s - tt)).sqrt();
    let mcc = if denom == 0.0 { 0.0 } else { (c * s - pt) / denom };

    Ok(ConfusionMetrics {
        accuracy: c / s,
        balanced_accuracy: recalls.iter().sum::<f64>() / recalls.len() as f64,
        macro_f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
        mcc,
    })
}

/// F1 of class `positive`.
pub fn f1_score(predicted: &[usize], truth: &[usize], positive: usize) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    let tp = predicted.iter().zip(truth).filter(|(p, t)| **p == positive && **t == positive).count();
    let predicted_pos = predicted.iter().filter(|&&p| p == positive).count();
    let actual_pos = truth.iter().filter(|&&t| t == positive).count();
    if predicted_pos + actual_pos == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (predicted_pos + actual_pos) as f64)
}

/// Mann–Whitney AUROC with midranks: `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`.
pub fn auroc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: positive.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both positive and negative samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives, so midranks stay integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share the midrank (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u64;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| positive[k]).count() as u64;
        twice_rank_sum += twice_mid * pos_in_tie;
        i = j + 1;
    }
    let twice_u = twice_rank_sum - (n_pos * (n_pos + 1)) as u64;
    Ok((twice_u as f64 / 2.0) / (n_pos as f64 * n_neg as f64))
}

/// Binary: the score of class 1. Multiclass: macro one-vs-rest over the
/// classes present in `y`.
pub fn auroc(probs: &ProbabilityMatrix, y: &[usize]) -> Result<f64> {
    let c = probs.n_classes();
    if y.len() != probs.n_rows() {
        return Err(Error::LengthMismatch {
            left: probs.n_rows(),
            right: y.len(),
        });
    }
    let column = |k: usize| probs.as_array().column(k).to_vec();
    if c == 2 {
        let pos: Vec<bool> = y.iter().map(|&v| v == 1).collect();
        return auroc_binary(&column(1), &pos);
    }
    let present: Vec<usize> = (0..c).filter(|k| y.contains(k)).collect();
    if present.len() < 2 {
        return Err(Error::UndefinedMetric("AUROC needs at least two classes in the truth".into()));
    }
    let mut total = 0.0;
    for &k in &present {
        let pos: Vec<bool> = y.iter().map(|&v| v == k).collect();
        total += auroc_binary(&column(k), &pos)?;
    }
    Ok(total / present.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    BalancedAccuracy,
    MacroF1,
    Mcc,
    Auroc,
    /// Negative log-loss, so that larger is better like the others.
    NegLogLoss,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidConfig(format!("unknown metric `{s}`")))
    }
}

impl Metric {
    pub fn compute(self, probs: &ProbabilityMatrix, y: &[usize]) -> Result<f64> {
        let c = probs.n_classes();
        let confusion = || confusion_metrics(&probs.argmax(), y, c);
        Ok(match self {
            Metric::Accuracy => confusion()?.accuracy,
            Metric::BalancedAccuracy => confusion()?.balanced_accuracy,
            Metric::MacroF1 => confusion()?.macro_f1,
            Metric::Mcc => confusion()?.mcc,
            Metric::Auroc => auroc(probs, y)?,
            Metric::NegLogLoss => -probs.log_loss(y)?,
        })
    }
}

/// Task-dependent metric set: multiclass reports accuracy, balanced
/// accuracy, AUROC and macro F1; binary reports accuracy, AUROC, F1 of the
/// positive class and MCC. AUROC is omitted when undefined.
pub fn evaluate(probs: &ProbabilityMatrix, y: &[usize], task: Task) -> Result<BTreeMap<String, f64>> {
    let predicted = probs.argmax();
    let cm = confusion_metrics(&predicted, y, probs.n_classes())?;
    let mut out = BTreeMap::new();
    out.insert("accuracy".to_string(), cm.accuracy);
    match auroc(probs, y) {
        Ok(v) => {
            out.insert("auroc".to_string(), v);
        }
        Err(Error::UndefinedMetric(_)) => {}
        Err(e) => return Err(e),
    }
    match task {
        Task::Multiclass => {
            out.insert("balanced_accuracy".to_string(), cm.balanced_accuracy);
            out.insert("macro_f1".to_string(), cm.macro_f1);
        }
        Task::Binary => {
            out.insert("f1".to_string(), f1_score(&predicted, y, 1)?);
            out.insert("mcc".to_string(), cm.mcc);
        }
    }
    Ok(out)
}

/// Per-fold metric values with their mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_fold: Vec<BTreeMap<String, f64>>,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn from_folds(per_fold: Vec<BTreeMap<String, f64>>) -> Self {
        let mut mean = BTreeMap::new();
        let mut std = BTreeMap::new();
        let names: std::collections::BTreeSet<&String> = per_fold.iter().flat_map(|f| f.keys()).collect();
        for name in names {
            let vals: Vec<f64> = per_fold.iter().filter_map(|f| f.get(name).copied()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            mean.insert(name.clone(), m);
            std.insert(name.clone(), v.sqrt());
        }
        Self { per_fold, mean, std }
    }
}

/// A group of input columns permuted together.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImportanceUnit {
    Tabular { name: String, columns: Vec<usize> },
    Embedding { name: String, columns: Option<Vec<usize>> },
}

impl ImportanceUnit {
    pub fn name(&self) -> String {
        match self {
            ImportanceUnit::Tabular { name, .. } => name.clone(),
            ImportanceUnit::Embedding { name, columns: None } => name.clone(),
            ImportanceUnit::Embedding {
                name,
                columns: Some(c),
            } if c.len() == 1 => format!("{name}[{}]", c[0]),
            ImportanceUnit::Embedding { name, .. } => format!("{name}[block]"),
        }
    }

    /// Each tabular column as its own unit.
    pub fn tabular_columns(names: &[String]) -> Vec<Self> {
        names
            .iter()
            .enumerate()
            .map(|(j, n)| ImportanceUnit::Tabular {
                name: n.clone(),
                columns: vec![j],
            })
            .collect()
    }

    fn permute(&self, batch: &mut ModalBatch, perm: &[usize]) -> Result<()> {
        let (matrix, columns) = match self {
            ImportanceUnit::Tabular { columns, .. } => (&mut batch.tabular, Some(columns.clone())),
            ImportanceUnit::Embedding { name, columns } => (
                batch
                    .embeddings
                    .get_mut(name)
                    .ok_or_else(|| Error::Schema(format!("no embedding source named `{name}`")))?,
                columns.clone(),
            ),
        };
        let columns = columns.unwrap_or_else(|| (0..matrix.ncols()).collect());
        for &j in &columns {
            if j >= matrix.ncols() {
                return Err(Error::shape(format!("column below {}", matrix.ncols()), j));
            }
            let col = matrix.slice(s![.., j]).select(Axis(0), perm);
            matrix.slice_mut(s![.., j]).assign(&col);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub unit: String,
    pub mean_drop: f64,
    pub drops: Vec<f64>,
}

/// Mean metric drop when each unit's columns are shuffled across rows.
pub fn permutation_importance(
    predict: impl Fn(&ModalBatch) -> Result<ProbabilityMatrix>,
    batch: &ModalBatch,
    y: &[usize],
    units: &[ImportanceUnit],
    metric: Metric,
    repeats: usize,
    seed: u64,
) -> Result<Vec<Importance>> {
    if repeats == 0 {
        return Err(Error::InvalidConfig("permutation importance needs repeats >= 1".into()));
    }
    let baseline = metric.compute(&predict(batch)?, y)?;
    units
        .iter()
        .enumerate()
        .map(|(u, unit)| {
            let drops = (0..repeats)
                .map(|r| {
                    let mut perm: Vec<usize> = (0..batch.n_rows()).collect();
                    perm.shuffle(&mut rng(derive_seed(seed, &[u as u64, r as u64])));
                    let mut shuffled = batch.clone();
                    unit.permute(&mut shuffled, &perm)?;
                    Ok(baseline - metric.compute(&predict(&shuffled)?, y)?)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(Importance {
                unit: unit.name(),
                mean_drop: drops.iter().sum::<f64>() / repeats as f64,
                drops,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1];
        let m = confusion_metrics(&y, &y, 3).unwrap();
        assert_eq!((m.accuracy, m.balanced_accuracy, m.macro_f1, m.mcc), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_predictor_has_zero_mcc() {
        assert_eq!(confusion_metrics(&[1, 1, 1, 1], &[0, 1, 0, 1], 2).unwrap().mcc, 0.0);
    }

    #[test]
    fn balanced_accuracy_example() {
        let m = confusion_metrics(&[0, 0, 1, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(m.balanced_accuracy, 0.75);
    }

    #[test]
    fn auroc_examples() {
        let pos = [false, false, true, true];
        assert_eq!(auroc_binary(&[0.1, 0.4, 0.35, 0.8], &pos).unwrap(), 0.75);
        assert_eq!(auroc_binary(&[0.1, 0.2, 0.3, 0.8], &pos).unwrap(), 1.0);
        assert_eq!(auroc_binary(&[0.5; 4], &pos).unwrap(), 0.5);
        assert!(matches!(auroc_binary(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn binary_auroc_uses_the_positive_column() {
        let p = ProbabilityMatrix::new(array![[0.9, 0.1], [0.6, 0.4], [0.65, 0.35], [0.2, 0.8]]).unwrap();
        assert_eq!(auroc(&p, &[0, 0, 1, 1]).unwrap(), 0.75);
    }
}
