//! Post-hoc analysis: attribution, faithfulness, token-space geometry,
//! fingerprint clustering and prediction metrics.

mod cluster;
mod fidelity;
mod geometry;
mod metrics;
mod rollout;

use thiserror::Error;

use crate::tensor::TensorError;

pub use cluster::{circular_fingerprint, circular_fingerprint_atoms, cluster_and_nmi, kmeans, nmi, NmiReport};
pub use fidelity::{
    ablate, attribute, bootstrap_gap, fidelity_report, fidelity_test, metric_drop, relative_drop, task_metric,
    top_bottom, Ablation, BootstrapSummary, FidelityReport,
};
pub use geometry::{cosine_distance, token_space_stats, token_states, TokenSpaceStats};
pub use metrics::{
    average_precision, mae, mean_average_precision, mean_mae, mean_rmse, mean_roc_auc, per_task_mean, rmse, roc_auc,
    TaskMean,
};
pub use rollout::{attention_rollout, residual_normalize, Attribution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("only one class present")]
    SingleClass,
    #[error("no data")]
    Empty,
    #[error("division by zero")]
    DivisionByZero,
    #[error("need at least two distinct tokens, found {0}")]
    InsufficientTokens(usize),
    #[error("need at least {needed} items, found {found}")]
    TooFewItems { needed: usize, found: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
