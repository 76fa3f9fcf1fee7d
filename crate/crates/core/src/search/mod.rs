//! Configuration search and ensemble construction.

mod ensemble;
mod run;
mod simplex;
mod space;
mod strategy;

pub use run::{run_search, Evaluation, Leaderboard, SearchResult, Trial, TrialEvaluator, TrialStatus, FAILED_SCORE};
pub use simplex::{optimize_simplex_weights, SimplexFit};
pub use space::{sample_config, sample_uniform, Config, ConfigExt, Domain, ParamValue, SamplerConfig, SamplerKind, SearchSpace};
pub use strategy::{
    decode_imaging_head, decode_joint, decode_tabular, fit_strategy, FoldArtifact, Strategy, StrategyEvaluator,
    LATE_WEIGHT_BUDGET,
};
pub use ensemble::{build_fusion_ensemble, EnsembleConfig, FoldEnsemble, FusionEnsemble, VertexCheck, VERTEX_TOLERANCE};
