//! Multi-task policy evaluation with truncated-SVD temporal-difference
//! learning.
//!
//! Tasks share a transition kernel and differ in rewards; their value
//! functions stack into a low-rank `d x N` matrix. [`learner::tsvd_td_step`]
//! runs synchronous TD on all tasks at once, bootstrapping from the rank-k
//! projection of the current iterate. Tabular and linear-feature TD are
//! provided as baselines, and [`experiments`] reproduces the convergence
//! comparisons and checks the theoretical envelopes.

pub mod cli;
pub mod env;
pub mod experiments;
pub mod learner;
pub mod linalg;

pub use env::{exact_value, generate_mdp, sample_batch, GroundTruth, MultiTaskMdp, SampleBatch};
pub use learner::{
    feature_td_step, tsvd_td_step, vanilla_td_step, FeatureModel, ScheduleKind, StepSchedule,
    ValueMatrix,
};
pub use linalg::{project_rank_k, truncated_svd, Matrix, SubspaceComplement, TruncatedSvd};
