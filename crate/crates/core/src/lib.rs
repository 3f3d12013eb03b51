//! Lightweight retinal-vessel segmentation network with hand-written
//! forward and backward passes.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod attention;
pub mod config;
pub mod data_io;
pub mod error;
pub mod evalx;
pub mod exec;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod training;

pub use config::LfaConfig;
pub use data_io::{load_checkpoint, save_checkpoint, Manifest, Sample};
pub use error::{LfaError, Result};
pub use evalx::{confusion_counts, estimate_flops, metrics, ComplexityReport, ConfusionCounts, MetricsReport};
pub use gradcheck::{grad_check, run_suite, GradCheckOptions, GradReport, SuiteOptions};
pub use model::{ablation_config, ablation_row, build_model, model_forward, Model, ModelConfig};
pub use exec::Exec;
pub use params::{BufferId, ParamId, ParamStore};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{Shape, Tensor};
pub use training::{adam_step, weighted_dice_loss, AdamConfig, AdamState, DiceLossConfig, TrainRunConfig, Trainer};

/// Whether a forward pass trains (batch statistics, active dropout) or
/// infers (running statistics, dropout off).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    Train,
    #[default]
    Infer,
}
