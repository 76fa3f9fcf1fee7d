//! Automated multimodal classification over tabular features and frozen
//! image embeddings.
//!
//! The crate searches tabular pipelines, embedding heads and three fusion
//! strategies (late, early, joint), combines the best of each into weighted
//! ensembles, calibrates conformal prediction sets and explains predictions
//! with integrated gradients and permutation importance.

pub mod conformal;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod prob;
pub mod rng;
pub mod search;
pub mod synth;

pub use error::{Error, Result};
pub use prob::ProbabilityMatrix;
