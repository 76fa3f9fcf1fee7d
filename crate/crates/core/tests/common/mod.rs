//! Shared helpers for the integration tests: random data and
//! finite-difference gradient checks.
#![allow(dead_code)]

use std::collections::BTreeMap;

use fusionml::dataset::ModalBatch;
use fusionml::fusion::{BranchSpec, EarlyFusionModel, HeadSpec, JointFusionModel, JointSpec, RepresentationSpec};
use fusionml::nn::{Activation, Architecture, Differentiable, MlpGrads, MlpParams};
use fusionml::pipeline::{score_gradient, ImputeStrategy, ReducerSpec, ScalerKind};
use fusionml::rng::rng;
use fusionml::ProbabilityMatrix;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, 1e-6)`: relative error with a floor for
/// near-zero derivatives.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.sample(StandardNormal))
}

pub fn labels(n: usize, c: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    // Every class appears at least once.
    (0..n).map(|i| if i < c { i } else { r.random_range(0..c) }).collect()
}

pub fn random_batch(n: usize, tabular: usize, embeddings: &[(&str, usize)], seed: u64) -> ModalBatch {
    ModalBatch {
        tabular: normal_matrix(n, tabular, seed),
        embeddings: embeddings
            .iter()
            .enumerate()
            .map(|(k, (name, w))| (name.to_string(), normal_matrix(n, *w, seed ^ (0x9E37 + k as u64))))
            .collect::<BTreeMap<_, _>>(),
    }
}

pub fn flatten(layers: &[fusionml::nn::Dense]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
        .collect()
}

/// Sets parameter `k` of the row-major weights-then-bias layout.
pub fn nudge(layers: &mut [fusionml::nn::Dense], mut k: usize, delta: f64) {
    for l in layers {
        let nw = l.weights.len();
        if k < nw {
            let cols = l.weights.ncols();
            l.weights[[k / cols, k % cols]] += delta;
            return;
        }
        k -= nw;
        if k < l.bias.len() {
            l.bias[k] += delta;
            return;
        }
        k -= l.bias.len();
    }
    panic!("parameter index out of range");
}

fn central(f: impl Fn(f64) -> f64) -> f64 {
    (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
}

/// Worst relative error of an MLP's loss gradient over parameters and inputs.
pub fn mlp_loss_check(params: &MlpParams, x: &Array2<f64>, y: &[usize]) -> f64 {
    let (_, grads, gx): (f64, MlpGrads, Array2<f64>) = params.gradients(x, y).unwrap();
    let analytic = flatten(&grads.layers);
    let loss = |p: &MlpParams, x: &Array2<f64>| p.gradients(x, y).unwrap().0;
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let n = central(|d| {
            let mut p = params.clone();
            nudge(&mut p.layers, k, d);
            loss(&p, x)
        });
        worst = worst.max(rel_err(*a, n));
    }
    for ((i, j), a) in gx.indexed_iter() {
        let n = central(|d| {
            let mut xp = x.clone();
            xp[[i, j]] += d;
            loss(params, &xp)
        });
        worst = worst.max(rel_err(*a, n));
    }
    worst
}

/// Worst relative error of a model's target-probability input gradient.
pub fn input_gradient_check<M: Differentiable>(model: &M, xs: &Array2<f64>, target: usize) -> f64 {
    let (_, grads) = model.values_and_gradients(xs, target).unwrap();
    let mut worst: f64 = 0.0;
    for ((i, j), a) in grads.indexed_iter() {
        let n = central(|d| {
            let mut row = xs.row(i).to_owned().insert_axis(ndarray::Axis(0));
            row[[0, j]] += d;
            model.values_and_gradients(&row, target).unwrap().0[0]
        });
        worst = worst.max(rel_err(*a, n));
    }
    worst
}

/// Worst relative error of a joint model's loss gradient over every branch
/// and head parameter and every standardized branch input.
pub fn joint_loss_check(model: &JointFusionModel, inputs: &[Array2<f64>], y: &[usize]) -> f64 {
    let (_, grads) = model.gradients(inputs, y).unwrap();
    let loss = |m: &JointFusionModel, inputs: &[Array2<f64>]| m.gradients(inputs, y).unwrap().0;
    let mut worst: f64 = 0.0;
    for (k, a) in flatten(&grads.head.layers).iter().enumerate() {
        let n = central(|d| {
            let mut m = model.clone();
            nudge(&mut m.head.layers, k, d);
            loss(&m, inputs)
        });
        worst = worst.max(rel_err(*a, n));
    }
    for (b, g) in grads.branches.iter().enumerate() {
        for (k, a) in flatten(&g.layers).iter().enumerate() {
            let n = central(|d| {
                let mut m = model.clone();
                nudge(&mut m.branches[b].net.layers, k, d);
                loss(&m, inputs)
            });
            worst = worst.max(rel_err(*a, n));
        }
    }
    for (b, g) in grads.inputs.iter().enumerate() {
        for ((i, j), a) in g.indexed_iter() {
            let n = central(|d| {
                let mut xs = inputs.to_vec();
                xs[b][[i, j]] += d;
                loss(model, &xs)
            });
            worst = worst.max(rel_err(*a, n));
        }
    }
    worst
}

/// Worst relative error of the boosting score gradient.
pub fn boosting_check(scores: &Array2<f64>, y: &[usize]) -> f64 {
    let g = score_gradient(scores, y);
    let loss = |s: &Array2<f64>| ProbabilityMatrix::from_logits(s).log_loss(y).unwrap();
    let mut worst: f64 = 0.0;
    for ((i, j), a) in g.indexed_iter() {
        let n = central(|d| {
            let mut s = scores.clone();
            s[[i, j]] += d;
            loss(&s)
        });
        worst = worst.max(rel_err(*a, n));
    }
    worst
}

pub fn activation(k: u64) -> Activation {
    if k % 2 == 0 {
        Activation::Tanh
    } else {
        Activation::Relu
    }
}

/// Nonzero biases keep pre-activations off the ReLU kink at exactly zero,
/// where a dead layer would otherwise leave them.
pub fn jitter_biases(layers: &mut [fusionml::nn::Dense], seed: u64) {
    let mut r = rng(seed ^ 0xB1A5);
    for l in layers {
        l.bias.mapv_inplace(|_| r.sample::<f64, _>(StandardNormal) * 0.3);
    }
}

pub fn random_mlp(input: usize, hidden: &[usize], output: usize, act: Activation, seed: u64) -> MlpParams {
    let mut p = MlpParams::init(&Architecture::new(input, hidden, output, act), seed);
    jitter_biases(&mut p.layers, seed);
    p
}

pub fn head(hidden: &[usize], act: Activation, epochs: usize) -> HeadSpec {
    HeadSpec {
        hidden: hidden.to_vec(),
        activation: act,
        lr: 0.01,
        epochs,
        weight_decay: 0.0,
        batch_size: 0,
    }
}

pub fn fit_early(batch: &ModalBatch, y: &[usize], c: usize, act: Activation, seed: u64) -> EarlyFusionModel {
    let reps = [
        RepresentationSpec::TabularPipelineOutput {
            imputer: ImputeStrategy::Mean,
            scaler: ScalerKind::Standard,
            reducer: ReducerSpec::None,
        },
        RepresentationSpec::Embedding { name: "image".into() },
    ];
    fusionml::fusion::fit_early_fusion(batch, y, c, &reps, &head(&[6], act, 5), seed).unwrap()
}

pub fn joint_spec(act: Activation, epochs: usize) -> JointSpec {
    JointSpec {
        branches: vec![
            BranchSpec {
                representation: RepresentationSpec::TabularRaw,
                hidden: vec![5],
                output: 3,
            },
            BranchSpec {
                representation: RepresentationSpec::Embedding { name: "image".into() },
                hidden: vec![],
                output: 4,
            },
        ],
        head: head(&[5], act, epochs),
        branch_lr_scale: 1.0,
    }
}
