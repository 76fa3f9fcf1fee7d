//! Tabular pipelines: imputation, scaling, optional PCA and a classifier,
//! each fitted on training rows only and applied in that order.

mod boosting;
mod forest;
mod impute;
mod pca;
mod scale;
mod tree;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use boosting::{fit_gradient_boosting, score_gradient, BoostingRound, GradientBoosting};
pub use forest::{fit_random_forest, RandomForest};
pub use impute::{fit_imputer, ImputeStrategy, Imputer};
pub use pca::{fit_pca, Pca};
pub use scale::{fit_scaler, Scaler, ScalerKind};
pub use tree::{Node, Tree};

use crate::error::{Error, Result};
use crate::nn::{train_mlp, train_mlp_from, Activation, Architecture, MlpParams, Optimizer, TrainConfig};
use crate::prob::ProbabilityMatrix;
use crate::rng::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    LogisticRegression {
        l2: f64,
        lr: f64,
        epochs: usize,
    },
    RandomForest {
        n_trees: usize,
        /// 0 means unlimited.
        max_depth: usize,
        min_leaf: usize,
    },
    GradientBoosting {
        n_rounds: usize,
        lr: f64,
        max_depth: usize,
    },
    Mlp {
        hidden: Vec<usize>,
        lr: f64,
        epochs: usize,
        weight_decay: f64,
        #[serde(default = "default_activation")]
        activation: Activation,
    },
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedClassifier {
    LogisticRegression { params: MlpParams },
    RandomForest { forest: RandomForest },
    GradientBoosting { model: GradientBoosting },
    Mlp { params: MlpParams },
}

impl FittedClassifier {
    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<ProbabilityMatrix> {
        match self {
            FittedClassifier::LogisticRegression { params } | FittedClassifier::Mlp { params } => {
                params.predict_proba(x)
            }
            FittedClassifier::RandomForest { forest } => forest.predict_proba(x),
            FittedClassifier::GradientBoosting { model } => model.predict_proba(x),
        }
    }

    /// The underlying network for gradient-based explanations, if any.
    pub fn network(&self) -> Option<&MlpParams> {
        match self {
            FittedClassifier::LogisticRegression { params } | FittedClassifier::Mlp { params } => Some(params),
            _ => None,
        }
    }
}

/// Fits one classifier. Logistic regression is full-batch gradient descent
/// from zero weights; the MLP is full-batch Adam.
pub fn fit_classifier(
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
    spec: &ClassifierSpec,
    seed: u64,
) -> Result<FittedClassifier> {
    crate::nn::check_labels(y, x.nrows(), n_classes)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("classifier input contains non-finite values".into()));
    }
    Ok(match spec {
        ClassifierSpec::LogisticRegression { l2, lr, epochs } => {
            let arch = Architecture::new(x.ncols(), &[], n_classes, Activation::Relu);
            let config = TrainConfig {
                learning_rate: *lr,
                epochs: *epochs,
                batch_size: 0,
                weight_decay: *l2,
                seed,
                optimizer: Optimizer::Sgd,
            };
            let (params, _) = train_mlp_from(MlpParams::zeros(&arch), x, y, &config)?;
            FittedClassifier::LogisticRegression { params }
        }
        ClassifierSpec::RandomForest {
            n_trees,
            max_depth,
            min_leaf,
        } => FittedClassifier::RandomForest {
            forest: fit_random_forest(
                x,
                y,
                n_classes,
                *n_trees,
                (*max_depth > 0).then_some(*max_depth),
                *min_leaf,
                seed,
            )?,
        },
        ClassifierSpec::GradientBoosting { n_rounds, lr, max_depth } => FittedClassifier::GradientBoosting {
            model: fit_gradient_boosting(x, y, n_classes, *n_rounds, *lr, *max_depth, seed)?,
        },
        ClassifierSpec::Mlp {
            hidden,
            lr,
            epochs,
            weight_decay,
            activation,
        } => {
            let arch = Architecture::new(x.ncols(), hidden, n_classes, *activation);
            let config = TrainConfig {
                learning_rate: *lr,
                epochs: *epochs,
                batch_size: 0,
                weight_decay: *weight_decay,
                seed,
                optimizer: Optimizer::adam(),
            };
            FittedClassifier::Mlp {
                params: train_mlp(x, y, &arch, &config)?,
            }
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReducerSpec {
    None,
    Pca { n_components: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPipelineSpec {
    pub imputer: ImputeStrategy,
    pub scaler: ScalerKind,
    pub reducer: ReducerSpec,
    pub classifier: ClassifierSpec,
}

impl TabularPipelineSpec {
    /// Mean imputation, standard scaling, no reduction.
    pub fn with_classifier(classifier: ClassifierSpec) -> Self {
        Self {
            imputer: ImputeStrategy::Mean,
            scaler: ScalerKind::Standard,
            reducer: ReducerSpec::None,
            classifier,
        }
    }
}

/// Fitted imputer, scaler and reducer: everything before the classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedPreprocessor {
    pub input_width: usize,
    pub imputer: Imputer,
    pub scaler: Scaler,
    pub pca: Option<Pca>,
}

impl FittedPreprocessor {
    /// PCA keeps at most `min(n − 1, p)` components; larger requests are
    /// truncated to that bound.
    pub fn fit(x: &Array2<f64>, imputer: ImputeStrategy, scaler: ScalerKind, reducer: ReducerSpec) -> Result<Self> {
        let imputer = fit_imputer(x, imputer)?;
        let filled = imputer.transform(x)?;
        let scaler = fit_scaler(&filled, scaler);
        let scaled = scaler.transform(&filled)?;
        let pca = match reducer {
            ReducerSpec::None => None,
            ReducerSpec::Pca { n_components } => {
                let max = x.nrows().saturating_sub(1).min(x.ncols());
                Some(fit_pca(&scaled, n_components.min(max))?)
            }
        };
        Ok(Self {
            input_width: x.ncols(),
            imputer,
            scaler,
            pca,
        })
    }

    pub fn output_width(&self) -> usize {
        self.pca.as_ref().map_or(self.input_width, Pca::n_components)
    }

    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_width {
            return Err(Error::shape(format!("{} columns", self.input_width), x.ncols()));
        }
        let z = self.scaler.transform(&self.imputer.transform(x)?)?;
        match &self.pca {
            Some(p) => p.transform(&z),
            None => Ok(z),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedTabularPipeline {
    pub spec: TabularPipelineSpec,
    pub preprocessor: FittedPreprocessor,
    pub classifier: FittedClassifier,
}

impl FittedTabularPipeline {
    pub fn fit(x: &Array2<f64>, y: &[usize], n_classes: usize, spec: &TabularPipelineSpec, seed: u64) -> Result<Self> {
        let preprocessor = FittedPreprocessor::fit(x, spec.imputer, spec.scaler, spec.reducer)?;
        let z = preprocessor.transform(x)?;
        let classifier = fit_classifier(&z, y, n_classes, &spec.classifier, derive_seed(seed, &[0xC1A5]))?;
        Ok(Self {
            spec: spec.clone(),
            preprocessor,
            classifier,
        })
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<ProbabilityMatrix> {
        self.classifier.predict_proba(&self.preprocessor.transform(x)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
