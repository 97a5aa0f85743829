//! Seeded training loop, loss curves and binary checkpoints.

mod checkpoint;
mod config;
mod trainer;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::TrainConfig;
pub use trainer::{batch_grads, batch_indices, eval_loss, train, write_loss_csv, LossPoint, TrainState};
