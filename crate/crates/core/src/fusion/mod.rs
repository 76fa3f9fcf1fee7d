//! Late, early and joint fusion of tabular features and image embeddings,
//! plus the [`FittedPredictor`] interface every strategy is evaluated through.

mod early;
mod joint;
mod late;
mod representation;

use serde::{Deserialize, Serialize};

pub use early::{fit_early_fusion, EarlyFusionModel, HeadSpec};
pub use joint::{fit_joint_fusion, Branch, BranchSpec, JointFusionModel, JointGrads, JointSpec};
pub use late::{fit_late_fusion, predict_late, LateFusionModel, WeightedEnsemble};
pub use representation::{Representation, RepresentationSpec};

use crate::dataset::ModalBatch;
use crate::error::Result;
use crate::pipeline::FittedTabularPipeline;
use crate::prob::ProbabilityMatrix;

/// Any trained model over a [`ModalBatch`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedPredictor {
    Tabular { pipeline: FittedTabularPipeline },
    /// A head over a single embedding source.
    Imaging { model: EarlyFusionModel },
    Early { model: EarlyFusionModel },
    Joint { model: JointFusionModel },
    /// Late fusion and every ensemble level.
    Weighted { model: WeightedEnsemble },
}

impl FittedPredictor {
    pub fn predict_proba(&self, batch: &ModalBatch) -> Result<ProbabilityMatrix> {
        match self {
            FittedPredictor::Tabular { pipeline } => pipeline.predict_proba(&batch.tabular),
            FittedPredictor::Imaging { model } | FittedPredictor::Early { model } => model.predict_proba(batch),
            FittedPredictor::Joint { model } => model.predict_proba(batch),
            FittedPredictor::Weighted { model } => model.predict_proba(batch),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
