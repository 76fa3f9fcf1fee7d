//! Integrated-gradients completeness on the fusion models.

mod common;

use common::*;
use fusionml::fusion::JointFusionModel;
use fusionml::nn::{integrated_gradients, path_breakpoints, Activation, Differentiable};

fn completeness_ratio<M: Differentiable>(model: &M, x: &[f64], baseline: &[f64]) -> f64 {
    let a = integrated_gradients(model, x, baseline, None, 512).unwrap();
    a.completeness_gap() / (1e-3 * (a.output_at_input - a.output_at_baseline).abs() + 1e-6)
}

#[test]
fn early_fusion_attributions_are_complete() {
    for seed in 0..10u64 {
        let batch = random_batch(40, 3, &[("image", 5)], seed);
        let y = labels(40, 3, seed);
        let model = fit_early(&batch, &y, 3, Activation::Relu, seed);
        let raw = model.raw_features(&batch).unwrap();
        let ratio = completeness_ratio(&model, &raw.row(0).to_vec(), &model.default_baseline());
        assert!(ratio < 1.0, "seed {seed}: {ratio}");
    }
}

#[test]
fn joint_fusion_attributions_are_complete() {
    for seed in 0..10u64 {
        let batch = random_batch(40, 3, &[("image", 5)], seed);
        let mut model = JointFusionModel::init(&joint_spec(Activation::Relu, 1), &batch, 3, seed).unwrap();
        jitter_biases(&mut model.head.layers, seed);
        for (b, branch) in model.branches.iter_mut().enumerate() {
            jitter_biases(&mut branch.net.layers, seed + 1 + b as u64);
        }
        let raw = model.raw_features(&batch).unwrap();
        let (x, baseline) = (raw.row(1).to_vec(), model.default_baseline());
        assert!(path_breakpoints(&model, &x, &baseline).unwrap().len() > 2, "seed {seed}: no kinks crossed");
        let ratio = completeness_ratio(&model, &x, &baseline);
        assert!(ratio < 1.0, "seed {seed}: {ratio}");
    }
}
