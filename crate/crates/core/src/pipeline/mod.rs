//! Model assembly, Monte Carlo prediction, training, evaluation and
//! checkpoints.

mod checkpoint;
mod config;
mod metrics;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Ablations, Hyperparams};
pub use metrics::{
    entropy, entropy_report, evaluate, predict_accounts, predict_report, timing_probe, AccountPrediction,
    EntropyHistogram, MetricSet, PredictionReport, TimingRow, ECE_BINS, ENTROPY_BINS, TIMING_BATCH_SIZES,
};
pub use model::{
    ForwardVars, Layout, LossVars, ModelConfig, Prepared, RmnpModel, LATENT_VARIANCE_FLOOR, LOG_STD_RANGE,
};
pub use train::{train, train_with, AdamW, EpochRecord, TrainOutcome};
