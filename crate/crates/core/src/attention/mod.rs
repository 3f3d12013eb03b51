//! Region-aware attention for skips and the bottleneck, and the
//! LiteFusion attention block.

pub mod litefusion;
pub mod raa;

pub use litefusion::{focal_modulation, LiteFusionBlock, LiteFusionSettings};
pub use raa::RaaBlock;
