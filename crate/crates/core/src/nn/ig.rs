//! Integrated gradients with a midpoint Riemann rule.
//!
//! ReLU gradients jump where a unit changes sign, which caps a plain
//! midpoint rule at first-order accuracy. Models that report their
//! piecewise-linear pre-activations get the path split at those sign
//! changes first, so the rule runs on smooth pieces.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, MlpParams};
use crate::error::{Error, Result};
use crate::prob::{argmax, softmax_rows};

/// A scalar model output that can be differentiated with respect to its input.
pub trait Differentiable {
    fn input_width(&self) -> usize;

    /// Output `F_target(x)` and `∂F_target/∂x` for each row of `xs`.
    fn values_and_gradients(&self, xs: &Array2<f64>, target: usize) -> Result<(Vec<f64>, Array2<f64>)>;

    /// The target explained when the caller does not pick one.
    fn default_target(&self, _x: &[f64]) -> Result<usize> {
        Ok(0)
    }

    /// Pre-activations of piecewise-linear units for each row of `xs`,
    /// grouped by depth with the shallowest level first. A unit may only
    /// depend on units of earlier levels.
    fn kink_levels(&self, _xs: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        Ok(Vec::new())
    }
}

/// `F(x) = w·x`; useful as an exactly integrable reference.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearScore {
    pub weights: Vec<f64>,
}

impl Differentiable for LinearScore {
    fn input_width(&self) -> usize {
        self.weights.len()
    }

    fn values_and_gradients(&self, xs: &Array2<f64>, _target: usize) -> Result<(Vec<f64>, Array2<f64>)> {
        if xs.ncols() != self.weights.len() {
            return Err(Error::shape(self.weights.len(), xs.ncols()));
        }
        let values = xs
            .outer_iter()
            .map(|r| r.iter().zip(&self.weights).map(|(a, b)| a * b).sum())
            .collect();
        let grads = Array2::from_shape_fn(xs.dim(), |(_, j)| self.weights[j]);
        Ok((values, grads))
    }
}

/// Explains the softmax probability of the target class.
impl Differentiable for MlpParams {
    fn input_width(&self) -> usize {
        MlpParams::input_width(self)
    }

    fn values_and_gradients(&self, xs: &Array2<f64>, target: usize) -> Result<(Vec<f64>, Array2<f64>)> {
        if target >= self.output_width() {
            return Err(Error::shape(format!("target below {}", self.output_width()), target));
        }
        let cache = self.forward_cached(xs)?;
        let (values, grad_logits) = probability_gradient(&cache.logits, target);
        let (_, input_grad) = self.backward(&cache, &grad_logits);
        Ok((values, input_grad))
    }

    fn default_target(&self, x: &[f64]) -> Result<usize> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("one row");
        let (logits, _) = self.forward(&row)?;
        Ok(argmax(logits.row(0).as_slice().expect("contiguous")))
    }

    fn kink_levels(&self, xs: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        if self.activation != Activation::Relu {
            return Ok(Vec::new());
        }
        Ok(self.forward_cached(xs)?.pre)
    }
}

/// `p_t` per row and `∂p_t/∂z = p_t (e_t − p)`.
pub(crate) fn probability_gradient(logits: &Array2<f64>, target: usize) -> (Vec<f64>, Array2<f64>) {
    let probs = softmax_rows(logits);
    let values: Vec<f64> = probs.column(target).to_vec();
    let mut grad = probs.mapv(|p| -p);
    for (i, mut row) in grad.outer_iter_mut().enumerate() {
        row[target] += 1.0;
        row.mapv_inplace(|g| g * values[i]);
    }
    (values, grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub target: usize,
    pub values: Vec<f64>,
    pub output_at_input: f64,
    pub output_at_baseline: f64,
}

impl Attribution {
    /// `|Σ attributions − (F(x) − F(baseline))|`.
    pub fn completeness_gap(&self) -> f64 {
        (self.values.iter().sum::<f64>() - (self.output_at_input - self.output_at_baseline)).abs()
    }
}

fn path_points(x: &[f64], baseline: &[f64], alphas: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((alphas.len(), x.len()), |(k, j)| baseline[j] + alphas[k] * (x[j] - baseline[j]))
}

/// Path fractions `0 = c_0 < … < c_n = 1` between which no kink unit
/// changes sign. Levels are refined in order: once the shallower levels are
/// fixed on a piece, every unit of the next level is affine there and
/// changes sign at most once.
pub fn path_breakpoints<M: Differentiable + ?Sized>(model: &M, x: &[f64], baseline: &[f64]) -> Result<Vec<f64>> {
    let mut cuts = vec![0.0, 1.0];
    let depth = model.kink_levels(&path_points(x, baseline, &cuts))?.len();
    for level in 0..depth {
        let levels = model.kink_levels(&path_points(x, baseline, &cuts))?;
        let z = &levels[level];
        let mut refined = cuts.clone();
        for s in 0..cuts.len() - 1 {
            for (&z0, &z1) in z.row(s).iter().zip(z.row(s + 1)) {
                if z0 * z1 < 0.0 {
                    refined.push(cuts[s] + (cuts[s + 1] - cuts[s]) * z0 / (z0 - z1));
                }
            }
        }
        refined.sort_by(f64::total_cmp);
        refined.dedup();
        cuts = refined;
    }
    Ok(cuts)
}

/// Midpoint-rule integrated gradients along the straight path from
/// `baseline` to `x`: `a_i = (x_i − b_i) · ∫₀¹ ∂F/∂x_i(b + α(x − b)) dα`.
/// The path is cut at [`path_breakpoints`]; a piece spanning `[c, c′]`
/// gets `max(1, round(m·c′) − round(m·c))` of the `m = steps` evaluations.
pub fn integrated_gradients<M: Differentiable + ?Sized>(
    model: &M,
    x: &[f64],
    baseline: &[f64],
    target: Option<usize>,
    steps: usize,
) -> Result<Attribution> {
    let d = model.input_width();
    if x.len() != d || baseline.len() != d {
        return Err(Error::shape(d, format!("{} / {}", x.len(), baseline.len())));
    }
    if steps == 0 {
        return Err(Error::InvalidConfig("integrated gradients need at least one step".into()));
    }
    let target = match target {
        Some(t) => t,
        None => model.default_target(x)?,
    };
    let (end_values, _) = model.values_and_gradients(&path_points(x, baseline, &[1.0, 0.0]), target)?;

    let cuts = path_breakpoints(model, x, baseline)?;
    let mut nodes: Vec<(f64, f64)> = Vec::with_capacity(steps + cuts.len());
    for w in cuts.windows(2) {
        let share = |c: f64| (c * steps as f64).round() as i64;
        let n = (share(w[1]) - share(w[0])).max(1) as usize;
        let len = w[1] - w[0];
        nodes.extend((0..n).map(|k| (w[0] + (k as f64 + 0.5) / n as f64 * len, len / n as f64)));
    }

    const CHUNK: usize = 1024;
    let mut total = vec![0.0; d];
    for chunk in nodes.chunks(CHUNK) {
        let alphas: Vec<f64> = chunk.iter().map(|n| n.0).collect();
        let (_, grads) = model.values_and_gradients(&path_points(x, baseline, &alphas), target)?;
        for (row, (_, weight)) in grads.outer_iter().zip(chunk) {
            for (t, g) in total.iter_mut().zip(row) {
                *t += weight * g;
            }
        }
    }
    let values = (0..d).map(|j| (x[j] - baseline[j]) * total[j]).collect();
    Ok(Attribution {
        target,
        values,
        output_at_input: end_values[0],
        output_at_baseline: end_values[1],
    })
}
