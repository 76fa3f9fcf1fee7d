//! Finite-difference checks of every analytic gradient.

mod common;

use common::*;
use fusionml::nn::Differentiable;

#[test]
fn mlp_loss_gradients() {
    let shapes: [&[usize]; 4] = [&[], &[4], &[5, 3], &[3, 4, 2]];
    for seed in 0..20u64 {
        let hidden = shapes[seed as usize % shapes.len()];
        let c = 2 + seed as usize % 3;
        let params = random_mlp(4, hidden, c, activation(seed), seed);
        let x = normal_matrix(6, 4, seed + 100);
        let worst = mlp_loss_check(&params, &x, &labels(6, c, seed));
        assert!(worst < FD_TOLERANCE, "seed {seed}, hidden {hidden:?}: {worst:e}");
    }
}

#[test]
fn early_fusion_input_gradients() {
    for seed in 0..20u64 {
        let batch = random_batch(30, 3, &[("image", 4)], seed);
        let y = labels(30, 3, seed);
        let model = fit_early(&batch, &y, 3, activation(seed), seed);
        let xs = model.raw_features(&batch).unwrap().slice(ndarray::s![..3, ..]).to_owned();
        let worst = input_gradient_check(&model, &xs, seed as usize % 3);
        assert!(worst < FD_TOLERANCE, "seed {seed}: {worst:e}");
    }
}

#[test]
fn joint_fusion_gradients() {
    for seed in 0..20u64 {
        let batch = random_batch(12, 3, &[("image", 4)], seed);
        let y = labels(12, 3, seed);
        let mut model =
            fusionml::fusion::JointFusionModel::init(&joint_spec(activation(seed), 1), &batch, 3, seed).unwrap();
        jitter_biases(&mut model.head.layers, seed);
        for (b, branch) in model.branches.iter_mut().enumerate() {
            jitter_biases(&mut branch.net.layers, seed + 1 + b as u64);
        }
        let inputs = model.branch_inputs(&batch).unwrap();
        let small: Vec<_> = inputs.iter().map(|x| x.slice(ndarray::s![..5, ..]).to_owned()).collect();
        let worst = joint_loss_check(&model, &small, &y[..5]);
        assert!(worst < FD_TOLERANCE, "seed {seed} loss: {worst:e}");
        let raw = model.raw_features(&batch).unwrap().slice(ndarray::s![..3, ..]).to_owned();
        assert_eq!(raw.ncols(), model.input_width());
        let worst = input_gradient_check(&model, &raw, seed as usize % 3);
        assert!(worst < FD_TOLERANCE, "seed {seed} input: {worst:e}");
    }
}

#[test]
fn boosting_score_gradients() {
    for seed in 0..20u64 {
        let c = 2 + seed as usize % 4;
        let worst = boosting_check(&normal_matrix(8, c, seed), &labels(8, c, seed));
        assert!(worst < FD_TOLERANCE, "seed {seed}: {worst:e}");
    }
}
