//! Ensemble weights on the probability simplex, chosen to minimize the
//! validation log-loss of the weighted mixture.
//!
//! The mixture log-loss is convex in the weights, so a short global phase
//! (uniform point, vertices, seeded Dirichlet draws) followed by pairwise
//! golden-section moves converges to the optimum. Candidates replace the
//! incumbent only on strict improvement, so identical members keep the
//! uniform starting point and the result is never worse than any vertex.

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::ProbabilityMatrix;
use crate::rng::rng;

const LOG_LOSS_EPS: f64 = 1e-15;
const MIN_IMPROVEMENT: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexFit {
    pub weights: Vec<f64>,
    /// Validation log-loss of the returned mixture.
    pub loss: f64,
    /// Validation log-loss of every member on its own.
    pub vertex_losses: Vec<f64>,
}

impl SimplexFit {
    /// Mixture loss minus the best single member's loss (≤ 0 up to rounding).
    pub fn vertex_gap(&self) -> f64 {
        self.loss - self.vertex_losses.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Per-sample probability of the true label for every member.
struct Objective {
    /// `truth[m][i]` = member m's probability of y_i.
    truth: Vec<Vec<f64>>,
}

impl Objective {
    fn loss(&self, w: &[f64]) -> f64 {
        let n = self.truth[0].len();
        let mut total = 0.0;
        for i in 0..n {
            let p: f64 = self.truth.iter().zip(w).map(|(t, &wm)| wm * t[i]).sum();
            total -= p.max(LOG_LOSS_EPS).ln();
        }
        total / n as f64
    }
}

/// Minimizes `t ↦ f(t)` on `[lo, hi]` for unimodal `f`.
fn golden_section(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Fits simplex weights over `members` on validation labels `y`.
///
/// `budget` is the number of Dirichlet draws in the global phase.
pub fn optimize_simplex_weights(
    members: &[&ProbabilityMatrix],
    y: &[usize],
    budget: usize,
    seed: u64,
) -> Result<SimplexFit> {
    let m = members.len();
    if m == 0 {
        return Err(Error::InvalidConfig("weight optimization needs at least one member".into()));
    }
    if y.is_empty() {
        return Err(Error::UndefinedMetric("no validation labels".into()));
    }
    let shape = members[0].as_array().dim();
    for p in members {
        if p.as_array().dim() != shape {
            return Err(Error::shape(format!("{shape:?}"), format!("{:?}", p.as_array().dim())));
        }
    }
    let vertex_losses = members.iter().map(|p| p.log_loss(y)).collect::<Result<Vec<_>>>()?;
    if m == 1 {
        return Ok(SimplexFit {
            weights: vec![1.0],
            loss: vertex_losses[0],
            vertex_losses,
        });
    }
    let objective = Objective {
        truth: members
            .iter()
            .map(|p| y.iter().enumerate().map(|(i, &c)| p.as_array()[[i, c]]).collect())
            .collect(),
    };

    let mut best = vec![1.0 / m as f64; m];
    let mut best_loss = objective.loss(&best);
    let consider = |w: Vec<f64>, loss: f64, best: &mut Vec<f64>, best_loss: &mut f64| {
        if loss < *best_loss - MIN_IMPROVEMENT {
            *best = w;
            *best_loss = loss;
        }
    };
    for (k, &loss) in vertex_losses.iter().enumerate() {
        let mut w = vec![0.0; m];
        w[k] = 1.0;
        consider(w, loss, &mut best, &mut best_loss);
    }
    let mut r = rng(seed);
    for _ in 0..budget {
        let raw: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut r)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let loss = objective.loss(&w);
        consider(w, loss, &mut best, &mut best_loss);
    }

    // Pairwise refinement: move mass t from member j to member i.
    for _ in 0..200 {
        let start = best_loss;
        for i in 0..m {
            for j in 0..m {
                if i == j || best[j] <= 0.0 {
                    continue;
                }
                let (wi, wj) = (best[i], best[j]);
                let moved = |t: f64| {
                    let mut w = best.clone();
                    w[i] = wi + t;
                    w[j] = wj - t;
                    w
                };
                let t = golden_section(0.0, wj, |t| objective.loss(&moved(t)));
                let mut to_vertex = moved(wj);
                to_vertex[j] = 0.0;
                for w in [moved(t), to_vertex] {
                    let loss = objective.loss(&w);
                    consider(w, loss, &mut best, &mut best_loss);
                }
            }
        }
        if start - best_loss <= MIN_IMPROVEMENT {
            break;
        }
    }

    let total: f64 = best.iter().sum();
    let weights: Vec<f64> = best.iter().map(|w| w.max(0.0) / total).collect();
    let members_mix = ProbabilityMatrix::mix(members, &weights)?;
    let loss = members_mix.log_loss(y)?;
    Ok(SimplexFit {
        weights,
        loss,
        vertex_losses,
    })
}
