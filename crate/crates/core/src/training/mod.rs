//! Seeded training loop, evaluation, checkpointing and the ablation
//! harness.

mod ablation;
mod adam;
mod checkpoint;
mod config;
mod step;
mod trainer;

pub use ablation::{ablate, worker_threads, AblationRow, AblationTable, RunScores, Variant, METRIC_COLUMNS};
pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{AblationFlags, DataConfig, PredictionHead, TrainConfig};
pub use step::{class_predictions, predict_batch, record_batch_loss, BatchLoss, Objective, Prediction};
pub use trainer::{evaluate, evaluate_model, train, train_with, EpochRecord, MetricsSummary, RunRecord, TrainOutcome, Trainer};
