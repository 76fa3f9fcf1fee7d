//! Dense feed-forward networks with explicit backpropagation.
//!
//! These back the MLP classifier, the embedding heads, the early and joint
//! fusion networks, and integrated-gradient attributions.

mod ig;
mod mlp;
mod train;

pub use ig::{integrated_gradients, path_breakpoints, Attribution, Differentiable, LinearScore};
pub use mlp::{Activation, Architecture, Dense, ForwardCache, MlpGrads, MlpParams};
pub use train::{train_mlp, train_mlp_from, Optimizer, OptimizerState, TrainConfig, TrainHistory};
pub(crate) use ig::probability_gradient;
pub(crate) use mlp::cross_entropy_grad;
pub(crate) use train::{apply_update, check_labels, diverged};
