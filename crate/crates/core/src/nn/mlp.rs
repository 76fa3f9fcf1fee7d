use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{softmax_rows, ProbabilityMatrix};
use crate::rng::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation value.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Layer widths of a network: `input → hidden… → output`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(input: usize, hidden: &[usize], output: usize, activation: Activation) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            output,
            activation,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(self.output);
        w
    }
}

/// A dense layer `x·W + b` with `W` stored input-major (in × out).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weights: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

/// Network parameters. Hidden layers use `activation`; the last layer emits
/// raw logits which are turned into class probabilities by a softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Gradients with the same layout as [`MlpParams::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Dense>,
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to every layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pub(crate) pre: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

impl MlpParams {
    /// Glorot-uniform weights, `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = rng(seed);
        let widths = arch.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-a..a));
                Dense {
                    weights,
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self {
            layers,
            activation: arch.activation,
        }
    }

    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch.widths().windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self {
            layers,
            activation: arch.activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("at least one layer").weights.ncols()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input: self.input_width(),
            hidden: self.layers[..self.layers.len() - 1]
                .iter()
                .map(|l| l.weights.ncols())
                .collect(),
            output: self.output_width(),
            activation: self.activation,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::shape(
                format!("{} input columns", self.input_width()),
                x.ncols(),
            ));
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for layer in &self.layers[..last] {
            let z = layer.apply(&h);
            inputs.push(h);
            h = z.mapv(|v| self.activation.apply(v));
            pre.push(z);
        }
        let logits = self.layers[last].apply(&h);
        inputs.push(h);
        Ok(ForwardCache {
            inputs,
            pre,
            logits,
        })
    }

    /// Logits and their row-softmax.
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, ProbabilityMatrix)> {
        let cache = self.forward_cached(x)?;
        let probs = ProbabilityMatrix::from_logits(&cache.logits);
        Ok((cache.logits, probs))
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<ProbabilityMatrix> {
        Ok(self.forward(x)?.1)
    }

    /// Backpropagates `grad_logits` (∂loss/∂logits) to parameter and input gradients.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Array2<f64>) -> (MlpGrads, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_logits.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[l];
            grads.push(Dense {
                weights: input.t().dot(&g),
                bias: g.sum_axis(Axis(0)),
            });
            let mut g_in = g.dot(&layer.weights.t());
            if l > 0 {
                let act = self.activation;
                g_in.zip_mut_with(&cache.pre[l - 1], |gi, &z| *gi *= act.derivative(z));
            }
            g = g_in;
        }
        grads.reverse();
        (MlpGrads { layers: grads }, g)
    }

    /// Mean cross-entropy over the batch, its parameter gradients and the
    /// gradient with respect to the inputs.
    pub fn gradients(&self, x: &Array2<f64>, y: &[usize]) -> Result<(f64, MlpGrads, Array2<f64>)> {
        if y.len() != x.nrows() {
            return Err(Error::LengthMismatch {
                left: x.nrows(),
                right: y.len(),
            });
        }
        let cache = self.forward_cached(x)?;
        let (loss, grad_logits) = cross_entropy_grad(&cache.logits, y)?;
        let (grads, input_grad) = self.backward(&cache, &grad_logits);
        Ok((loss, grads, input_grad))
    }
}

/// Mean cross-entropy of softmax(`logits`) and `(softmax − onehot) / n`.
pub(crate) fn cross_entropy_grad(logits: &Array2<f64>, y: &[usize]) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows();
    let c = logits.ncols();
    if let Some(&bad) = y.iter().find(|&&v| v >= c) {
        return Err(Error::shape(format!("labels below {c}"), bad));
    }
    let mut probs = softmax_rows(logits);
    let mut loss = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let row = logits.row(i);
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[yi];
        probs[[i, yi]] -= 1.0;
    }
    probs.mapv_inplace(|v| v / n as f64);
    Ok((loss / n as f64, probs))
}
