//! Optimization and training loops: AdamW with decoupled weight decay, the
//! warmup/linear-decay schedule, bit-exact checkpointing, and the
//! pre-training driver.

pub mod adamw;
pub mod checkpoint;
pub mod pretrain;
pub mod schedule;

pub use adamw::{adamw_step, AdamWConfig, OptimState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use pretrain::{pretrain, PretrainedModel, TrainConfig};
pub use schedule::{lr_at, Schedule};
