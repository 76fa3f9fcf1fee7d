//! The five searched strategies: their default spaces, how a configuration
//! decodes into a model, and cross-validated evaluation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::{Evaluation, TrialEvaluator};
use super::space::{Config, ConfigExt, SearchSpace};
use crate::dataset::{FoldSplit, ModalBatch, MultimodalDataset};
use crate::error::{Error, Result};
use crate::fusion::{
    fit_early_fusion, fit_joint_fusion, fit_late_fusion, BranchSpec, FittedPredictor, HeadSpec, JointSpec,
    RepresentationSpec, WeightedEnsemble,
};
use crate::nn::Activation;
use crate::pipeline::{
    ClassifierSpec, FittedTabularPipeline, ImputeStrategy, ReducerSpec, ScalerKind, TabularPipelineSpec,
};
use crate::prob::ProbabilityMatrix;
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Tabular,
    Imaging,
    Late,
    Early,
    Joint,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Tabular,
        Strategy::Imaging,
        Strategy::Late,
        Strategy::Early,
        Strategy::Joint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Tabular => "tabular",
            Strategy::Imaging => "imaging",
            Strategy::Late => "late",
            Strategy::Early => "early",
            Strategy::Joint => "joint",
        }
    }

    pub fn uses_embeddings(self) -> bool {
        self != Strategy::Tabular
    }

    /// Default search space; `embeddings` names the available sources.
    pub fn default_space(self, embeddings: &[String]) -> SearchSpace {
        let sources: Vec<&str> = embeddings.iter().map(String::as_str).collect();
        match self {
            Strategy::Tabular => tabular_space(SearchSpace::default()),
            Strategy::Imaging => imaging_space(SearchSpace::default()).categorical("img_source", &sources),
            Strategy::Late => imaging_space(tabular_space(SearchSpace::default())),
            Strategy::Early => preprocess_space(SearchSpace::default())
                .categorical("tab_repr", &["raw", "pipeline"])
                .categorical("head_hidden", &["16", "32", "64", "32-16"])
                .float("head_lr", 2e-3, 3e-2, true)
                .int("head_epochs", 150, 400, false)
                .float("head_weight_decay", 1e-6, 1e-2, true)
                .categorical("head_activation", &["relu", "tanh"]),
            Strategy::Joint => preprocess_space(SearchSpace::default())
                .categorical("tab_repr", &["raw", "pipeline"])
                .categorical("tab_branch_hidden", &["none", "16"])
                .int("tab_branch_out", 4, 16, false)
                .categorical("img_branch_hidden", &["none", "32"])
                .int("img_branch_out", 4, 16, false)
                .categorical("head_hidden", &["none", "16", "32"])
                .float("head_lr", 2e-3, 3e-2, true)
                .int("head_epochs", 150, 400, false)
                .float("head_weight_decay", 1e-6, 1e-2, true)
                .categorical("head_activation", &["relu", "tanh"])
                .float("branch_lr_scale", 0.1, 1.0, true),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

fn preprocess_space(s: SearchSpace) -> SearchSpace {
    s.categorical("imputer", &["mean", "most_frequent", "constant_zero"])
        .categorical("scaler", &["none", "standard", "minmax"])
        .categorical("reducer", &["none", "pca"])
        .float("pca_fraction", 0.2, 1.0, false)
}

fn tabular_space(s: SearchSpace) -> SearchSpace {
    preprocess_space(s)
        .categorical(
            "classifier",
            &["logistic_regression", "random_forest", "gradient_boosting", "mlp"],
        )
        .float("lr_l2", 1e-5, 1e-1, true)
        .float("lr_lr", 0.05, 2.0, true)
        .int("lr_epochs", 100, 500, false)
        .int("rf_n_trees", 10, 100, false)
        .int("rf_max_depth", 0, 12, false)
        .int("rf_min_leaf", 1, 10, false)
        .int("gb_n_rounds", 10, 100, false)
        .float("gb_lr", 0.03, 0.5, true)
        .int("gb_max_depth", 1, 4, false)
        .categorical("mlp_hidden", &["16", "32", "64", "32-16"])
        .float("mlp_lr", 1e-3, 3e-2, true)
        .int("mlp_epochs", 100, 400, false)
        .float("mlp_weight_decay", 1e-6, 1e-2, true)
        .categorical("mlp_activation", &["relu", "tanh"])
}

fn imaging_space(s: SearchSpace) -> SearchSpace {
    s.categorical("img_hidden", &["none", "16", "32", "64"])
        .float("img_lr", 2e-3, 3e-2, true)
        .int("img_epochs", 100, 400, false)
        .float("img_weight_decay", 1e-6, 1e-2, true)
        .categorical("img_activation", &["relu", "tanh"])
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    if s == "none" || s.is_empty() {
        return Ok(Vec::new());
    }
    s.split('-')
        .map(|w| {
            w.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad hidden layer list `{s}`")))
        })
        .collect()
}

fn parse_activation(s: &str) -> Result<Activation> {
    match s {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        _ => Err(Error::InvalidConfig(format!("unknown activation `{s}`"))),
    }
}

fn enum_choice<T: serde::de::DeserializeOwned>(c: &Config, name: &str) -> Result<T> {
    let v = c.choice(name)?;
    serde_json::from_value(serde_json::Value::String(v.to_string()))
        .map_err(|_| Error::InvalidConfig(format!("bad value `{v}` for `{name}`")))
}

fn positive(c: &Config, name: &str) -> Result<usize> {
    let v = c.int(name)?;
    usize::try_from(v).map_err(|_| Error::InvalidConfig(format!("`{name}` must be non-negative")))
}

fn decode_reducer(c: &Config, width: usize) -> Result<ReducerSpec> {
    Ok(match c.choice("reducer")? {
        "none" => ReducerSpec::None,
        "pca" => ReducerSpec::Pca {
            n_components: ((c.float("pca_fraction")? * width as f64).round() as usize).clamp(1, width.max(1)),
        },
        other => return Err(Error::InvalidConfig(format!("unknown reducer `{other}`"))),
    })
}

/// Decodes the tabular-pipeline part of a configuration.
pub fn decode_tabular(c: &Config, width: usize) -> Result<TabularPipelineSpec> {
    let classifier = match c.choice("classifier")? {
        "logistic_regression" => ClassifierSpec::LogisticRegression {
            l2: c.float("lr_l2")?,
            lr: c.float("lr_lr")?,
            epochs: positive(c, "lr_epochs")?,
        },
        "random_forest" => ClassifierSpec::RandomForest {
            n_trees: positive(c, "rf_n_trees")?,
            max_depth: positive(c, "rf_max_depth")?,
            min_leaf: positive(c, "rf_min_leaf")?,
        },
        "gradient_boosting" => ClassifierSpec::GradientBoosting {
            n_rounds: positive(c, "gb_n_rounds")?,
            lr: c.float("gb_lr")?,
            max_depth: positive(c, "gb_max_depth")?,
        },
        "mlp" => ClassifierSpec::Mlp {
            hidden: parse_hidden(c.choice("mlp_hidden")?)?,
            lr: c.float("mlp_lr")?,
            epochs: positive(c, "mlp_epochs")?,
            weight_decay: c.float("mlp_weight_decay")?,
            activation: parse_activation(c.choice("mlp_activation")?)?,
        },
        other => return Err(Error::InvalidConfig(format!("unknown classifier `{other}`"))),
    };
    Ok(TabularPipelineSpec {
        imputer: enum_choice::<ImputeStrategy>(c, "imputer")?,
        scaler: enum_choice::<ScalerKind>(c, "scaler")?,
        reducer: decode_reducer(c, width)?,
        classifier,
    })
}

pub fn decode_imaging_head(c: &Config) -> Result<HeadSpec> {
    Ok(HeadSpec {
        hidden: parse_hidden(c.choice("img_hidden")?)?,
        activation: parse_activation(c.choice("img_activation")?)?,
        lr: c.float("img_lr")?,
        epochs: positive(c, "img_epochs")?,
        weight_decay: c.float("img_weight_decay")?,
        batch_size: 0,
    })
}

fn decode_tab_repr(c: &Config, width: usize) -> Result<RepresentationSpec> {
    Ok(match c.choice("tab_repr")? {
        "raw" => RepresentationSpec::TabularRaw,
        "pipeline" => RepresentationSpec::TabularPipelineOutput {
            imputer: enum_choice(c, "imputer")?,
            scaler: enum_choice(c, "scaler")?,
            reducer: decode_reducer(c, width)?,
        },
        other => return Err(Error::InvalidConfig(format!("unknown tabular representation `{other}`"))),
    })
}

fn decode_head(c: &Config) -> Result<HeadSpec> {
    Ok(HeadSpec {
        hidden: parse_hidden(c.choice("head_hidden")?)?,
        activation: parse_activation(c.choice("head_activation")?)?,
        lr: c.float("head_lr")?,
        epochs: positive(c, "head_epochs")?,
        weight_decay: c.float("head_weight_decay")?,
        batch_size: 0,
    })
}

pub fn decode_joint(c: &Config, width: usize, embeddings: &[String]) -> Result<JointSpec> {
    let mut branches = vec![BranchSpec {
        representation: decode_tab_repr(c, width)?,
        hidden: parse_hidden(c.choice("tab_branch_hidden")?)?,
        output: positive(c, "tab_branch_out")?,
    }];
    for name in embeddings {
        branches.push(BranchSpec {
            representation: RepresentationSpec::Embedding { name: name.clone() },
            hidden: parse_hidden(c.choice("img_branch_hidden")?)?,
            output: positive(c, "img_branch_out")?,
        });
    }
    Ok(JointSpec {
        branches,
        head: decode_head(c)?,
        branch_lr_scale: c.float("branch_lr_scale")?,
    })
}

/// Simplex-weight draws used when fitting late-fusion weights inside a trial.
pub const LATE_WEIGHT_BUDGET: usize = 64;

/// Fits one strategy configuration on `train`. Late fusion fits its weights
/// on `valid`.
pub fn fit_strategy(
    strategy: Strategy,
    config: &Config,
    data: &MultimodalDataset,
    train: &[usize],
    valid: &[usize],
    seed: u64,
) -> Result<FittedPredictor> {
    let batch = data.batch(train);
    let y = data.labels_at(train);
    let c = data.n_classes();
    let width = data.tabular.ncols();
    let embeddings = data.embedding_names();
    if strategy.uses_embeddings() && embeddings.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "strategy `{}` needs at least one embedding source",
            strategy.name()
        )));
    }
    let imaging = |name: &str, seed: u64| -> Result<FittedPredictor> {
        let head = decode_imaging_head(config)?;
        let reps = [RepresentationSpec::Embedding { name: name.to_string() }];
        Ok(FittedPredictor::Imaging {
            model: fit_early_fusion(&batch, &y, c, &reps, &head, seed)?,
        })
    };
    Ok(match strategy {
        Strategy::Tabular => FittedPredictor::Tabular {
            pipeline: FittedTabularPipeline::fit(&batch.tabular, &y, c, &decode_tabular(config, width)?, seed)?,
        },
        Strategy::Imaging => imaging(config.choice("img_source")?, seed)?,
        Strategy::Late => {
            let mut members = vec![FittedPredictor::Tabular {
                pipeline: FittedTabularPipeline::fit(
                    &batch.tabular,
                    &y,
                    c,
                    &decode_tabular(config, width)?,
                    derive_seed(seed, &[0]),
                )?,
            }];
            for (k, name) in embeddings.iter().enumerate() {
                members.push(imaging(name, derive_seed(seed, &[1 + k as u64]))?);
            }
            let valid_batch = data.batch(valid);
            let probs = members
                .iter()
                .map(|m| m.predict_proba(&valid_batch))
                .collect::<Result<Vec<_>>>()?;
            let fit = fit_late_fusion(&probs, &data.labels_at(valid), LATE_WEIGHT_BUDGET, derive_seed(seed, &[99]))?;
            FittedPredictor::Weighted {
                model: WeightedEnsemble::new(members, fit.weights)?,
            }
        }
        Strategy::Early => {
            let mut reps = vec![decode_tab_repr(config, width)?];
            reps.extend(embeddings.iter().map(|n| RepresentationSpec::Embedding { name: n.clone() }));
            FittedPredictor::Early {
                model: fit_early_fusion(&batch, &y, c, &reps, &decode_head(config)?, seed)?,
            }
        }
        Strategy::Joint => FittedPredictor::Joint {
            model: fit_joint_fusion(&batch, &y, c, &decode_joint(config, width, &embeddings)?, seed)?,
        },
    })
}

/// A fitted fold model with its validation and test predictions.
#[derive(Clone, Debug)]
pub struct FoldArtifact {
    pub predictor: FittedPredictor,
    pub valid: ProbabilityMatrix,
    pub test: ProbabilityMatrix,
}

/// Cross-validated evaluation of one strategy: fit on each fold's training
/// rows, score by log-loss on its validation rows.
pub struct StrategyEvaluator<'a> {
    pub strategy: Strategy,
    pub data: &'a MultimodalDataset,
    pub folds: &'a FoldSplit,
}

impl StrategyEvaluator<'_> {
    fn batches(&self, rows: &[usize]) -> ModalBatch {
        self.data.batch(rows)
    }
}

impl TrialEvaluator for StrategyEvaluator<'_> {
    type Artifact = Vec<FoldArtifact>;

    fn evaluate(&self, config: &Config, seed: u64) -> Result<Evaluation<Vec<FoldArtifact>>> {
        let per_fold = self
            .folds
            .folds
            .par_iter()
            .enumerate()
            .map(|(f, fold)| {
                let predictor = fit_strategy(
                    self.strategy,
                    config,
                    self.data,
                    &fold.train,
                    &fold.valid,
                    derive_seed(seed, &[f as u64]),
                )?;
                let valid = predictor.predict_proba(&self.batches(&fold.valid))?;
                let test = predictor.predict_proba(&self.batches(&fold.test))?;
                let y_valid = self.data.labels_at(&fold.valid);
                let loss = valid.log_loss(&y_valid)?;
                let acc = crate::metrics::Metric::Accuracy.compute(&valid, &y_valid)?;
                Ok((loss, acc, FoldArtifact { predictor, valid, test }))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per_fold.len() as f64;
        let mut aux = BTreeMap::new();
        aux.insert(
            "valid_accuracy".to_string(),
            per_fold.iter().map(|p| p.1).sum::<f64>() / n,
        );
        let fold_scores = per_fold.iter().map(|p| p.0).collect();
        Ok(Evaluation {
            fold_scores,
            aux,
            artifact: per_fold.into_iter().map(|p| p.2).collect(),
        })
    }
}
