//! The segmentation network: a three-stage multiscale encoder, an attention
//! bottleneck, and a three-stage decoder with optionally attended skips.

pub mod config;
pub mod network;

pub use config::{ablation_config, ablation_row, AblationRow, ModelConfig, ABLATION_ROWS, DEFAULT_ROW_ALIAS};
pub use network::{build_model, model_forward, Bottleneck, DecoderStage, EncoderStage, Model, SPATIAL_MULTIPLE};
