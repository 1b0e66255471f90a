//! Classification metrics, ROC analysis, Cohen's kappa with paired
//! bootstrap comparisons, and evaluation reports.

pub mod bootstrap;
pub mod evaluate;
pub mod io;
pub mod kappa;
pub mod metrics;
pub mod report;
pub mod sample;

use thiserror::Error;

pub use bootstrap::{percentile, replicate_rng, roc_band, RocBand};
pub use evaluate::{evaluate_model, Evaluation};
pub use io::{ProbabilityTable, RaterRecord};
pub use kappa::{cohens_kappa, kappa_difference_ci, KappaComparison, Verdict};
pub use metrics::{auc, auc_trapezoid, basic_metrics, roc_curve, BasicMetrics, ConfusionCounts, RocCurve};
pub use report::{
    compare_raters, metrics_report, ComparisonReport, MetricsReport, RaterComparison, TaskComparison, TaskMetrics,
};
pub use sample::stratified_subsample;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("length mismatch: {left} vs {right}")]
    Length { left: usize, right: usize },
    #[error("need at least one positive and one negative label")]
    SingleClass,
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Degenerate(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}
