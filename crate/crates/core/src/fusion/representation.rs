use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::ModalBatch;
use crate::error::{Error, Result};
use crate::pipeline::{fit_imputer, FittedPreprocessor, ImputeStrategy, Imputer, ReducerSpec, ScalerKind};

/// Where a modality's features come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum RepresentationSpec {
    /// One-hot tabular features with missing values mean-imputed.
    TabularRaw,
    /// Output of a fitted imputer/scaler/reducer chain.
    TabularPipelineOutput {
        imputer: ImputeStrategy,
        scaler: ScalerKind,
        reducer: ReducerSpec,
    },
    Embedding { name: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
enum Stage {
    Impute { imputer: Imputer },
    Preprocess { preprocessor: FittedPreprocessor },
    Identity,
}

/// A frozen feature extractor for one modality, fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub spec: RepresentationSpec,
    pub width: usize,
    stage: Stage,
}

impl Representation {
    pub fn fit(spec: &RepresentationSpec, train: &ModalBatch) -> Result<Self> {
        let (stage, width) = match spec {
            RepresentationSpec::TabularRaw => (
                Stage::Impute {
                    imputer: fit_imputer(&train.tabular, ImputeStrategy::Mean)?,
                },
                train.tabular.ncols(),
            ),
            RepresentationSpec::TabularPipelineOutput {
                imputer,
                scaler,
                reducer,
            } => {
                let preprocessor = FittedPreprocessor::fit(&train.tabular, *imputer, *scaler, *reducer)?;
                let width = preprocessor.output_width();
                (Stage::Preprocess { preprocessor }, width)
            }
            RepresentationSpec::Embedding { name } => (Stage::Identity, train.embedding(name)?.ncols()),
        };
        Ok(Self {
            spec: spec.clone(),
            width,
            stage,
        })
    }

    pub fn extract(&self, batch: &ModalBatch) -> Result<Array2<f64>> {
        let out = match (&self.stage, &self.spec) {
            (Stage::Impute { imputer }, _) => imputer.transform(&batch.tabular)?,
            (Stage::Preprocess { preprocessor }, _) => preprocessor.transform(&batch.tabular)?,
            (Stage::Identity, RepresentationSpec::Embedding { name }) => batch.embedding(name)?.clone(),
            (Stage::Identity, _) => unreachable!("identity stage is only built for embeddings"),
        };
        if out.ncols() != self.width {
            return Err(Error::shape(self.width, out.ncols()));
        }
        Ok(out)
    }

    /// True when the representation reads the tabular block.
    pub fn is_tabular(&self) -> bool {
        !matches!(self.spec, RepresentationSpec::Embedding { .. })
    }
}

/// Extracts every representation and concatenates them column-wise.
pub(crate) fn concat_features(reps: &[Representation], batch: &ModalBatch) -> Result<Array2<f64>> {
    let parts = reps.iter().map(|r| r.extract(batch)).collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(ndarray::concatenate(ndarray::Axis(1), &views).expect("equal row counts"))
}
