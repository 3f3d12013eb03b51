//! Segmentation metrics and model complexity accounting.

pub mod complexity;
pub mod metrics;

pub use complexity::{count_params, estimate_flops, ComplexityReport, FlopCounter, LayerCost};
pub use metrics::{confusion_counts, metrics, ConfusionCounts, MetricsReport, DEFAULT_THRESHOLD};
