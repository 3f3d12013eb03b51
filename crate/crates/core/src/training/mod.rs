//! Loss, optimizer and the training loop.

pub mod adam;
pub mod loss;
pub mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{weighted_dice_loss, DiceLossConfig};
pub use trainer::{evaluate, train_epoch, EpochStats, Evaluation, TrainRunConfig, Trainer};
