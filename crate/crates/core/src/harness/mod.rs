//! Experiment configuration, the training loop, and on-disk artifacts.

mod checkpoint;
mod config;
mod metrics;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{DownsampleStrategy, ExperimentConfig, LrSchedule, RolloutMode};
pub use metrics::{emit_metrics, parse_metrics_record, read_metrics_file, EpisodeMetrics, MetricsSink, Summary};
pub use trainer::{
    downsample_group, downsample_indices, train, Experiment, TrainReport, TrainingState, CHECKPOINT_FILE, METRICS_FILE,
    SUMMARY_FILE,
};
