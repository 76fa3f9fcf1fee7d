use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("column `{0}` is not part of the tabular schema")]
    UnknownColumn(String),

    #[error("sample ids do not match between tabular and embedding files: {0}")]
    IdMismatch(String),

    #[error("invalid fold count k={k}: need 2 <= k <= {groups} (distinct groups)")]
    InvalidK { k: usize, groups: usize },

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("column {0} has no observed values")]
    AllMissingColumn(usize),

    #[error("requested {requested} components but at most {max} are available")]
    Rank { requested: usize, max: usize },

    #[error("training labels contain fewer than two classes")]
    SingleClass,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("training diverged (loss non-finite or exploding) at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("row {row} is not a probability vector: {reason}")]
    InvalidProbability { row: usize, reason: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
