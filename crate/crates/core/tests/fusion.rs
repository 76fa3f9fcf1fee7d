mod common;

use common::*;
use fusionml::dataset::{ModalBatch, MultimodalDataset};
use fusionml::fusion::{
    fit_early_fusion, fit_joint_fusion, fit_late_fusion, BranchSpec, FittedPredictor, JointFusionModel, JointSpec,
    RepresentationSpec,
};
use fusionml::nn::{train_mlp_from, Activation};
use fusionml::rng::rng;
use fusionml::synth::{generate, SyntheticKind};
use fusionml::ProbabilityMatrix;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

fn random_probs(n: usize, c: usize, seed: u64) -> ProbabilityMatrix {
    let mut r = rng(seed);
    let mut m = Array2::from_shape_fn((n, c), |_| Exp1.sample(&mut r));
    for mut row in m.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    ProbabilityMatrix::new(m).unwrap()
}

/// Rows putting `confidence` on the true class and spreading the rest.
fn oracle_probs(y: &[usize], c: usize, confidence: f64) -> ProbabilityMatrix {
    let rest = (1.0 - confidence) / (c - 1) as f64;
    ProbabilityMatrix::new(Array2::from_shape_fn((y.len(), c), |(i, j)| if j == y[i] { confidence } else { rest }))
        .unwrap()
}

fn mix_loss(members: &[ProbabilityMatrix], w: &[f64], y: &[usize]) -> f64 {
    let refs: Vec<&ProbabilityMatrix> = members.iter().collect();
    ProbabilityMatrix::mix(&refs, w).unwrap().log_loss(y).unwrap()
}

#[test]
fn late_weights_favor_the_oracle_like_a_grid_search() {
    for seed in 0..5 {
        let y = labels(200, 3, seed);
        let members = [oracle_probs(&y, 3, 0.8), random_probs(200, 3, seed + 10)];
        let fit = fit_late_fusion(&members, &y, 64, seed).unwrap();
        let grid = (0..=1000)
            .map(|i| i as f64 / 1000.0)
            .min_by(|a, b| mix_loss(&members, &[*a, 1.0 - a], &y).total_cmp(&mix_loss(&members, &[*b, 1.0 - b], &y)))
            .unwrap();
        assert!(grid >= 0.9, "grid oracle {grid}");
        assert!(fit.weights[0] >= 0.9, "{:?}", fit.weights);
        assert!((fit.weights[0] - grid).abs() <= 2e-3, "{} vs grid {grid}", fit.weights[0]);
    }
}

#[test]
fn dominant_member_takes_nearly_all_weight() {
    let y = labels(150, 4, 3);
    // Member 0 puts more mass on the truth than member 1 in every row.
    let members = [oracle_probs(&y, 4, 0.7), oracle_probs(&y, 4, 0.3)];
    let fit = fit_late_fusion(&members, &y, 64, 0).unwrap();
    let grid_best = (0..=1000)
        .map(|i| i as f64 / 1000.0)
        .min_by(|a, b| mix_loss(&members, &[*a, 1.0 - a], &y).total_cmp(&mix_loss(&members, &[*b, 1.0 - b], &y)))
        .unwrap();
    assert_eq!(grid_best, 1.0);
    assert!(fit.weights[0] >= 0.99, "{:?}", fit.weights);
}

#[test]
fn three_members_beat_ten_thousand_random_mixtures() {
    for seed in 0..3u64 {
        let y = labels(120, 3, seed);
        let members = [oracle_probs(&y, 3, 0.5), random_probs(120, 3, seed + 1), random_probs(120, 3, seed + 2)];
        let fit = fit_late_fusion(&members, &y, 64, seed).unwrap();
        let mut r = rng(seed + 99);
        let best_random = (0..10_000)
            .map(|_| {
                let e: Vec<f64> = (0..3).map(|_| Exp1.sample(&mut r)).collect();
                let s: f64 = e.iter().sum();
                mix_loss(&members, &e.iter().map(|v| v / s).collect::<Vec<_>>(), &y)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(fit.loss <= best_random + 1e-6, "{} vs {best_random}", fit.loss);
        assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(fit.weights.iter().all(|&w| w >= 0.0));
    }
}

#[test]
fn identical_members_match_either_vertex() {
    let y = labels(80, 2, 1);
    let p = random_probs(80, 2, 4);
    let fit = fit_late_fusion(&[p.clone(), p.clone()], &y, 32, 0).unwrap();
    assert!((fit.loss - p.log_loss(&y).unwrap()).abs() <= 1e-9);
    assert_eq!(fit.weights, vec![0.5, 0.5]);
}

#[test]
fn single_member_gets_weight_one() {
    let y = labels(30, 2, 0);
    assert_eq!(fit_late_fusion(&[random_probs(30, 2, 0)], &y, 8, 0).unwrap().weights, vec![1.0]);
}

#[test]
fn early_head_width_is_the_sum_of_representation_widths() {
    let batch = random_batch(40, 27, &[("image", 384)], 0);
    let y = labels(40, 2, 0);
    let reps = [RepresentationSpec::TabularRaw, RepresentationSpec::Embedding { name: "image".into() }];
    let fit = || fit_early_fusion(&batch, &y, 2, &reps, &head(&[8], Activation::Relu, 3), 7).unwrap();
    let model = fit();
    assert_eq!(model.head.input_width(), 411);
    assert_eq!(model.blocks(), vec![0..27, 27..411]);
    assert_eq!(model.predict_proba(&batch).unwrap(), fit().predict_proba(&batch).unwrap());
}

#[test]
fn default_baselines_use_tabular_means_and_zero_embeddings() {
    let mut batch = random_batch(50, 3, &[("image", 2)], 5);
    batch.tabular.mapv_inplace(|v| v + 4.0);
    let y = labels(50, 2, 5);
    let reps = [RepresentationSpec::TabularRaw, RepresentationSpec::Embedding { name: "image".into() }];
    let model = fit_early_fusion(&batch, &y, 2, &reps, &head(&[], Activation::Tanh, 2), 0).unwrap();
    let means: Vec<f64> = batch.tabular.mean_axis(ndarray::Axis(0)).unwrap().to_vec();
    let base = model.default_baseline();
    for j in 0..3 {
        assert!((base[j] - means[j]).abs() < 1e-12);
    }
    assert_eq!(&base[3..], &[0.0, 0.0]);

    let joint = JointFusionModel::init(&joint_spec(Activation::Relu, 1), &batch, 2, 0).unwrap();
    let base = joint.default_baseline();
    assert_eq!(base.len(), 5);
    for j in 0..3 {
        assert!((base[j] - means[j]).abs() < 1e-12);
    }
    assert_eq!(&base[3..], &[0.0, 0.0]);
}

#[test]
fn joint_with_frozen_branches_is_early_fusion_on_initial_features() {
    for (seed, act) in [(0u64, Activation::Relu), (1, Activation::Tanh)] {
        let batch = random_batch(60, 4, &[("image", 6)], seed);
        let y = labels(60, 3, seed);
        let mut spec = joint_spec(act, 25);
        spec.branch_lr_scale = 0.0;
        spec.head.weight_decay = 1e-3;
        let init = JointFusionModel::init(&spec, &batch, 3, seed).unwrap();
        let features = init.branch_features(&init.branch_inputs(&batch).unwrap()).unwrap();
        let (expected, expected_history) =
            train_mlp_from(init.head.clone(), &features, &y, &spec.head.train_config(seed)).unwrap();
        let (trained, history) = init.clone().train(&batch, &y, &spec, seed).unwrap();
        assert_eq!(trained.head, expected);
        assert_eq!(history, expected_history);
        for (a, b) in trained.branches.iter().zip(&init.branches) {
            assert_eq!(a.net, b.net);
        }
    }
}

#[test]
fn every_branch_gets_gradient_on_the_first_step() {
    for seed in 0..5 {
        let batch = random_batch(40, 3, &[("image", 5)], seed);
        let y = labels(40, 2, seed);
        let model = fit_joint_fusion(&batch, &y, 2, &joint_spec(Activation::Tanh, 2), seed).unwrap();
        assert_eq!(model.first_step_branch_grad_norms.len(), 2);
        assert!(model.first_step_branch_grad_norms.iter().all(|&n| n > 0.0), "{:?}", model.first_step_branch_grad_norms);
    }
}

fn xor_split(seed: u64) -> (ModalBatch, Vec<usize>, ModalBatch, Vec<usize>) {
    let data: MultimodalDataset = generate(SyntheticKind::CrossModalXor, 400, seed).unwrap().to_dataset().unwrap();
    let train: Vec<usize> = (0..300).collect();
    let test: Vec<usize> = (300..400).collect();
    (data.batch(&train), data.labels_at(&train), data.batch(&test), data.labels_at(&test))
}

fn accuracy(p: &ProbabilityMatrix, y: &[usize]) -> f64 {
    p.argmax().iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

#[test]
fn early_and_joint_fusion_solve_cross_modal_xor() {
    let (train, y, test, y_test) = xor_split(11);
    let mut h = head(&[16], Activation::Relu, 300);
    h.lr = 0.02;
    let reps = [RepresentationSpec::TabularRaw, RepresentationSpec::Embedding { name: "image".into() }];
    let early = fit_early_fusion(&train, &y, 2, &reps, &h, 0).unwrap();
    let acc = accuracy(&early.predict_proba(&test).unwrap(), &y_test);
    assert!(acc >= 0.9, "early {acc}");

    let spec = JointSpec {
        branches: vec![
            BranchSpec {
                representation: RepresentationSpec::TabularRaw,
                hidden: vec![8],
                output: 4,
            },
            BranchSpec {
                representation: RepresentationSpec::Embedding { name: "image".into() },
                hidden: vec![8],
                output: 4,
            },
        ],
        head: h,
        branch_lr_scale: 1.0,
    };
    let joint = fit_joint_fusion(&train, &y, 2, &spec, 0).unwrap();
    let acc = accuracy(&joint.predict_proba(&test).unwrap(), &y_test);
    assert!(acc >= 0.9, "joint {acc}");
}

#[test]
fn fusion_predictors_emit_simplex_rows_and_round_trip() {
    let batch = random_batch(30, 3, &[("image", 5)], 2);
    let y = labels(30, 3, 2);
    let early = FittedPredictor::Early {
        model: fit_early(&batch, &y, 3, Activation::Relu, 0),
    };
    let joint = FittedPredictor::Joint {
        model: fit_joint_fusion(&batch, &y, 3, &joint_spec(Activation::Relu, 3), 0).unwrap(),
    };
    let late = FittedPredictor::Weighted {
        model: fusionml::fusion::WeightedEnsemble::new(vec![early.clone(), joint.clone()], vec![0.25, 0.75]).unwrap(),
    };
    let mut r = rng(0);
    for p in [early, joint, late] {
        let probs = p.predict_proba(&batch).unwrap();
        for i in 0..probs.n_rows() {
            let row = probs.row(i);
            assert!((row.sum() - 1.0).abs() < 1e-12 && row.iter().all(|&v| v >= 0.0));
        }
        let back = FittedPredictor::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        let k = r.random_range(0..probs.n_rows());
        assert_eq!(back.predict_proba(&batch).unwrap().row(k), probs.row(k));
    }
}
