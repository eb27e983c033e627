//! The assembled forecaster, its configuration, training loop, and
//! checkpoint format.

mod checkpoint;
mod config;
mod network;
mod train;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Ablation, ModelConfig, Optimizer};
pub use network::{hybrid_loss, Block, ForwardOutput, Sdgl};
pub use train::{AdamState, EpochLog, Evaluation, StepStats, TrainReport, TrainingData};
