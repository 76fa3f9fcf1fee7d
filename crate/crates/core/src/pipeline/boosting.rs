//! Multiclass gradient boosting on the softmax cross-entropy.
//!
//! Every round fits one regression tree per class to the negative gradient
//! `y_k − p_k` with Newton leaf values. The round's step is halved until the
//! training log-loss does not increase, so the loss sequence is monotone.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::tree::{build_tree, SquaredError, Tree, TreeParams};
use crate::error::{Error, Result};
use crate::nn::check_labels;
use crate::prob::{softmax_rows, ProbabilityMatrix};
use crate::rng::{derive_seed, rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostingRound {
    pub trees: Vec<Tree>,
    /// Effective step (learning rate after backtracking).
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    pub initial_scores: Vec<f64>,
    pub rounds: Vec<BoostingRound>,
    pub n_features: usize,
    /// Training log-loss before the first and after every round.
    pub train_loss: Vec<f64>,
}

fn mean_log_loss(scores: &Array2<f64>, y: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let row = scores.row(i);
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[yi];
    }
    total / y.len() as f64
}

/// Gradient of the mean softmax cross-entropy with respect to the raw scores.
pub fn score_gradient(scores: &Array2<f64>, y: &[usize]) -> Array2<f64> {
    let mut g = softmax_rows(scores);
    for (i, &yi) in y.iter().enumerate() {
        g[[i, yi]] -= 1.0;
    }
    g / y.len() as f64
}

pub fn fit_gradient_boosting(
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
    n_rounds: usize,
    learning_rate: f64,
    max_depth: usize,
    seed: u64,
) -> Result<GradientBoosting> {
    check_labels(y, x.nrows(), n_classes)?;
    if !(learning_rate > 0.0) {
        return Err(Error::InvalidConfig("boosting learning rate must be positive".into()));
    }
    let n = x.nrows();
    let mut counts = vec![0.0; n_classes];
    for &c in y {
        counts[c] += 1.0;
    }
    let initial_scores: Vec<f64> = counts.iter().map(|c| (c / n as f64).max(1e-6).ln()).collect();
    let mut scores = Array2::from_shape_fn((n, n_classes), |(_, c)| initial_scores[c]);
    let mut train_loss = vec![mean_log_loss(&scores, y)];
    let params = TreeParams {
        max_depth: Some(max_depth.max(1)),
        min_leaf: 1,
        max_features: None,
    };
    let shrink = (n_classes as f64 - 1.0) / n_classes as f64;
    let mut rounds = Vec::with_capacity(n_rounds);

    for round in 0..n_rounds {
        let probs = softmax_rows(&scores);
        let mut trees = Vec::with_capacity(n_classes);
        let mut update = Array2::zeros((n, n_classes));
        for c in 0..n_classes {
            let residual: Vec<f64> = (0..n)
                .map(|i| f64::from(u8::from(y[i] == c)) - probs[[i, c]])
                .collect();
            let hess: Vec<f64> = (0..n).map(|i| probs[[i, c]] * (1.0 - probs[[i, c]])).collect();
            let criterion = SquaredError {
                targets: &residual,
                leaf_fn: |rows: &[usize]| {
                    let num: f64 = rows.iter().map(|&i| residual[i]).sum();
                    let den: f64 = rows.iter().map(|&i| hess[i]).sum();
                    shrink * num / den.max(1e-12)
                },
            };
            let mut r = rng(derive_seed(seed, &[round as u64, c as u64]));
            let tree = build_tree(x, (0..n).collect(), &criterion, params, &mut r);
            for (i, row) in x.outer_iter().enumerate() {
                update[[i, c]] = tree.leaf_value(row)[0];
            }
            trees.push(tree);
        }

        let previous = *train_loss.last().unwrap();
        let mut step = learning_rate;
        let mut accepted = None;
        for _ in 0..30 {
            let candidate = &scores + &(&update * step);
            let loss = mean_log_loss(&candidate, y);
            if loss <= previous {
                accepted = Some((candidate, loss));
                break;
            }
            step /= 2.0;
        }
        let (next, loss) = accepted.unwrap_or_else(|| (scores.clone(), previous));
        if loss == previous {
            step = 0.0;
        }
        scores = next;
        train_loss.push(loss);
        rounds.push(BoostingRound { trees, step });
    }
    Ok(GradientBoosting {
        initial_scores,
        rounds,
        n_features: x.ncols(),
        train_loss,
    })
}

impl GradientBoosting {
    pub fn raw_scores(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::shape(format!("{} columns", self.n_features), x.ncols()));
        }
        let c = self.initial_scores.len();
        let mut scores = Array2::from_shape_fn((x.nrows(), c), |(_, k)| self.initial_scores[k]);
        for round in self.rounds.iter().filter(|r| r.step > 0.0) {
            for (mut out, row) in scores.axis_iter_mut(Axis(0)).zip(x.outer_iter()) {
                for (k, tree) in round.trees.iter().enumerate() {
                    out[k] += round.step * tree.leaf_value(row)[0];
                }
            }
        }
        Ok(scores)
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<ProbabilityMatrix> {
        Ok(ProbabilityMatrix::from_logits(&self.raw_scores(x)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn training_loss_never_increases() {
        let mut r = rng(8);
        for trial in 0..5 {
            let x = Array2::from_shape_simple_fn((80, 3), || r.random_range(-1.0..1.0));
            let y: Vec<usize> = (0..80)
                .map(|i| if x[[i, 0]] + 0.3 * r.random_range(-1.0..1.0) > 0.0 { 1 } else { i % 3 / 2 * 2 })
                .collect();
            let gb = fit_gradient_boosting(&x, &y, 3, 25, 0.9, 3, trial).unwrap();
            assert!(gb.train_loss.windows(2).all(|w| w[1] <= w[0]), "{:?}", gb.train_loss);
            assert!(gb.train_loss.last().unwrap() < &gb.train_loss[0]);
        }
    }

    #[test]
    fn reloaded_scores_match_training_scores() {
        let mut r = rng(1);
        let x = Array2::from_shape_simple_fn((30, 2), || r.random_range(-1.0..1.0));
        let y: Vec<usize> = (0..30).map(|i| usize::from(x[[i, 1]] > 0.0)).collect();
        let gb = fit_gradient_boosting(&x, &y, 2, 10, 0.3, 2, 0).unwrap();
        let s = gb.raw_scores(&x).unwrap();
        assert!((mean_log_loss(&s, &y) - gb.train_loss.last().unwrap()).abs() < 1e-12);
    }

    /// Finite-difference check of the score gradient used to fit every round.
    #[test]
    fn score_gradient_matches_finite_differences() {
        let mut r = rng(12);
        for _ in 0..20 {
            let s = Array2::from_shape_simple_fn((6, 3), || r.random_range(-2.0..2.0));
            let y: Vec<usize> = (0..6).map(|_| r.random_range(0..3)).collect();
            let g = score_gradient(&s, &y);
            let h = 1e-5;
            for i in 0..6 {
                for c in 0..3 {
                    let mut up = s.clone();
                    up[[i, c]] += h;
                    let mut down = s.clone();
                    down[[i, c]] -= h;
                    let fd = (mean_log_loss(&up, &y) - mean_log_loss(&down, &y)) / (2.0 * h);
                    let rel = (fd - g[[i, c]]).abs() / (fd.abs() + g[[i, c]].abs()).max(1e-7);
                    assert!(rel < 1e-4, "rel {rel}");
                }
            }
        }
    }
}
