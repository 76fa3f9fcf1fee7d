//! Top-K ensembles per strategy and the outer ensemble over strategies.
//!
//! Both levels fit simplex weights on each fold's validation predictions;
//! the resulting predictors are evaluated on that fold's test rows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::run::{run_search, Leaderboard};
use super::simplex::{optimize_simplex_weights, SimplexFit};
use super::space::{SamplerConfig, SearchSpace};
use super::strategy::{FoldArtifact, Strategy, StrategyEvaluator};
use crate::dataset::{FoldSplit, MultimodalDataset};
use crate::error::{Error, Result};
use crate::fusion::{FittedPredictor, WeightedEnsemble};
use crate::prob::ProbabilityMatrix;
use crate::rng::derive_seed;

/// Vertex recovery must hold to this tolerance for every weight fit.
pub const VERTEX_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Trials per strategy; strategies without a budget are not searched.
    pub budgets: BTreeMap<Strategy, usize>,
    pub top_k: usize,
    /// Dirichlet draws per weight fit.
    pub weight_budget: usize,
    pub sampler: SamplerConfig,
    /// Overrides of the default search spaces.
    #[serde(default)]
    pub spaces: BTreeMap<Strategy, SearchSpace>,
}

impl EnsembleConfig {
    pub fn uniform_budget(budget: usize, top_k: usize) -> Self {
        Self {
            budgets: Strategy::ALL.iter().map(|&s| (s, budget)).collect(),
            top_k,
            weight_budget: 64,
            sampler: SamplerConfig::default(),
            spaces: BTreeMap::new(),
        }
    }
}

/// One weight fit and whether it recovered the best vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexCheck {
    /// Strategy name, or "ensemble" for the outer level.
    pub level: String,
    pub fold: usize,
    pub gap: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct FoldEnsemble {
    /// Strategy ensembles in [`Strategy::ALL`] order (dropped ones absent).
    pub strategies: BTreeMap<Strategy, FoldArtifact>,
    pub strategy_fits: BTreeMap<Strategy, SimplexFit>,
    pub outer_fit: SimplexFit,
    pub ensemble: FoldArtifact,
}

#[derive(Clone, Debug)]
pub struct FusionEnsemble {
    pub leaderboards: BTreeMap<Strategy, Leaderboard>,
    /// Trial ids of the top-K members per strategy.
    pub members: BTreeMap<Strategy, Vec<usize>>,
    /// Strategies with no successful trial (or no budget).
    pub dropped: Vec<Strategy>,
    pub folds: Vec<FoldEnsemble>,
}

impl FusionEnsemble {
    pub fn included(&self) -> Vec<Strategy> {
        self.members.keys().copied().collect()
    }

    pub fn vertex_checks(&self) -> Vec<VertexCheck> {
        let mut out = Vec::new();
        for (f, fold) in self.folds.iter().enumerate() {
            let levels = fold
                .strategy_fits
                .iter()
                .map(|(s, fit)| (s.name().to_string(), fit))
                .chain(std::iter::once(("ensemble".to_string(), &fold.outer_fit)));
            for (level, fit) in levels {
                let gap = fit.vertex_gap();
                out.push(VertexCheck {
                    level,
                    fold: f,
                    gap,
                    passed: gap <= VERTEX_TOLERANCE,
                });
            }
        }
        out
    }
}

fn weighted(
    members: Vec<FoldArtifact>,
    y_valid: &[usize],
    budget: usize,
    seed: u64,
) -> Result<(FoldArtifact, SimplexFit)> {
    let valid: Vec<&ProbabilityMatrix> = members.iter().map(|m| &m.valid).collect();
    let fit = optimize_simplex_weights(&valid, y_valid, budget, seed)?;
    let valid_mix = ProbabilityMatrix::mix(&valid, &fit.weights)?;
    let test: Vec<&ProbabilityMatrix> = members.iter().map(|m| &m.test).collect();
    let test_mix = ProbabilityMatrix::mix(&test, &fit.weights)?;
    let predictor = FittedPredictor::Weighted {
        model: WeightedEnsemble::new(members.into_iter().map(|m| m.predictor).collect(), fit.weights.clone())?,
    };
    Ok((
        FoldArtifact {
            predictor,
            valid: valid_mix,
            test: test_mix,
        },
        fit,
    ))
}

/// Searches every budgeted strategy, forms top-K strategy ensembles and
/// fits the outer weights, fold by fold.
pub fn build_fusion_ensemble(
    data: &MultimodalDataset,
    folds: &FoldSplit,
    config: &EnsembleConfig,
    seed: u64,
) -> Result<FusionEnsemble> {
    if config.top_k == 0 {
        return Err(Error::InvalidConfig("top_k must be at least 1".into()));
    }
    if folds.folds.iter().any(|f| f.valid.is_empty()) {
        return Err(Error::InvalidConfig("ensembles need a validation carve-out in every fold".into()));
    }
    let embeddings = data.embedding_names();
    let mut leaderboards = BTreeMap::new();
    let mut members = BTreeMap::new();
    let mut dropped = Vec::new();
    let mut per_strategy: BTreeMap<Strategy, Vec<Vec<FoldArtifact>>> = BTreeMap::new();

    for (s_idx, strategy) in Strategy::ALL.into_iter().enumerate() {
        let budget = config.budgets.get(&strategy).copied().unwrap_or(0);
        if budget == 0 || (strategy.uses_embeddings() && embeddings.is_empty()) {
            dropped.push(strategy);
            continue;
        }
        let space = config
            .spaces
            .get(&strategy)
            .cloned()
            .unwrap_or_else(|| strategy.default_space(&embeddings));
        let evaluator = StrategyEvaluator {
            strategy,
            data,
            folds,
        };
        let result = run_search(
            &space,
            &evaluator,
            budget,
            derive_seed(seed, &[s_idx as u64]),
            &config.sampler,
            config.top_k,
        )?;
        let top: Vec<usize> = result.leaderboard.top(config.top_k).iter().map(|t| t.id).collect();
        log::info!(
            "{}: {} of {} trials succeeded, best validation log-loss {:.4}",
            strategy.name(),
            result.leaderboard.n_succeeded(),
            budget,
            result.leaderboard.best_score()
        );
        if top.is_empty() {
            dropped.push(strategy);
        } else {
            let mut artifacts = result.artifacts;
            per_strategy.insert(strategy, top.iter().map(|id| artifacts.remove(id).expect("kept")).collect());
            members.insert(strategy, top);
        }
        leaderboards.insert(strategy, result.leaderboard);
    }
    if per_strategy.is_empty() {
        return Err(Error::InvalidConfig("no strategy produced a successful trial".into()));
    }

    let mut fold_ensembles = Vec::with_capacity(folds.k());
    for (f, fold) in folds.folds.iter().enumerate() {
        let y_valid = data.labels_at(&fold.valid);
        let mut strategies = BTreeMap::new();
        let mut strategy_fits = BTreeMap::new();
        for (strategy, trials) in per_strategy.iter_mut() {
            let fold_members: Vec<FoldArtifact> = trials.iter_mut().map(|t| t[f].clone()).collect();
            let (artifact, fit) = weighted(
                fold_members,
                &y_valid,
                config.weight_budget,
                derive_seed(seed, &[0xE45E, *strategy as u64, f as u64]),
            )?;
            strategies.insert(*strategy, artifact);
            strategy_fits.insert(*strategy, fit);
        }
        let (ensemble, outer_fit) = weighted(
            strategies.values().cloned().collect(),
            &y_valid,
            config.weight_budget,
            derive_seed(seed, &[0x0E7E, f as u64]),
        )?;
        fold_ensembles.push(FoldEnsemble {
            strategies,
            strategy_fits,
            outer_fit,
            ensemble,
        });
    }
    Ok(FusionEnsemble {
        leaderboards,
        members,
        dropped,
        folds: fold_ensembles,
    })
}
