//! Optimizer, training loop, tiled inference and reporting.

mod config;
mod optim;
mod predict;
mod report;
mod trainer;

pub use config::{parse_size, DataConfig, RunConfig};
pub use optim::{adamw_step, grad_norm, AdamWState, OptimConfig};
pub use predict::{predict_labels, predict_tile_size};
pub use report::{stats_report, StatsOptions, REFERENCE_FIGURES};
pub use trainer::{
    load_training_data, StepLog, TrainSummary, Trainer, CHECKPOINT_DIR, CONFIG_FILE,
};
