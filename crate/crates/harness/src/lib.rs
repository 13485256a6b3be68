//! Training loop, metrics, fold-level experiments and table reports.

pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod train;

pub use data::{ClipStore, Sample};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentSpec, FoldResult};
pub use metrics::{mean_std, topk_accuracy, MetricsRow};
pub use train::{evaluate, train, EvalResult, RunConfig, TrainConfig, TrainRun, Trained};
