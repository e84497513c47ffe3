//! Datasets, configuration, checkpoints, reports and the training
//! schedule.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod report;
mod schedule;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{DatasetKind, ExperimentConfig, ThresholdMode};
pub use dataset::{load_dataset, DataSplit, Dataset};
pub use report::{EpochMetrics, RunReport};
pub use schedule::cosine_lr;
pub use trainer::{accuracy, phase_penalty, run_dacp_schedule, run_with_data, RunOutcome};
