use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attention::LiteFusionSettings;
use crate::error::{LfaError, Result};
use crate::layers::LEAKY_SLOPE;

/// Architecture switches and widths. Every parameter shape follows from
/// this alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub stage_widths: [usize; 3],
    /// Three parallel branches (1×1, 3×3, dilated 3×3) per encoder stage;
    /// otherwise a single 3×3 convolution.
    pub use_multiscale: bool,
    pub use_skips: bool,
    /// Decoder stages (1 = full resolution) whose skip passes through
    /// region-aware attention.
    pub raa_on_skips: BTreeSet<usize>,
    pub use_lf_bottleneck: bool,
    pub use_raa_bottleneck: bool,
    pub alpha: f32,
    pub gamma: f32,
    pub drop_rate: f32,
    pub leaky_slope: f32,
    /// Channel-mixer hidden width relative to the bottleneck width.
    pub hidden_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            stage_widths: [10, 18, 35],
            use_multiscale: true,
            use_skips: true,
            raa_on_skips: BTreeSet::from([1, 2]),
            use_lf_bottleneck: true,
            use_raa_bottleneck: true,
            alpha: 0.25,
            gamma: 2.0,
            drop_rate: 0.5,
            leaky_slope: LEAKY_SLOPE,
            hidden_ratio: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(LfaError::config("in_channels must be positive"));
        }
        if self.stage_widths.contains(&0) {
            return Err(LfaError::config(format!(
                "stage widths must be positive, got {:?}",
                self.stage_widths
            )));
        }
        if self.use_multiscale && self.stage_widths.iter().any(|&w| w < 3) {
            return Err(LfaError::config(format!(
                "multiscale stages need at least 3 channels, got {:?}",
                self.stage_widths
            )));
        }
        if let Some(bad) = self.raa_on_skips.iter().find(|&&s| !(1..=3).contains(&s)) {
            return Err(LfaError::config(format!("raa_on_skips names stage {bad}; stages are 1, 2, 3")));
        }
        if !self.use_skips && !self.raa_on_skips.is_empty() {
            return Err(LfaError::config("raa_on_skips requires use_skips"));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(LfaError::config(format!("leaky slope {} outside [0, 1)", self.leaky_slope)));
        }
        self.lite_fusion().validate()
    }

    pub fn lite_fusion(&self) -> LiteFusionSettings {
        LiteFusionSettings {
            alpha: self.alpha,
            gamma: self.gamma,
            drop_rate: self.drop_rate,
            hidden_ratio: self.hidden_ratio,
        }
    }

    /// Branch widths of encoder stage `k` (1-based). Multiscale splits the
    /// width as (⌊W/3⌋, rest, ⌊W/3⌋) over 1×1, 3×3, dilated 3×3. The single
    /// branch variant drops the 1×1 share.
    pub fn branch_widths(&self, k: usize) -> Vec<usize> {
        let w = self.stage_widths[k - 1];
        let third = w / 3;
        if self.use_multiscale {
            vec![third, w - 2 * third, third]
        } else {
            vec![w - third]
        }
    }

    /// Channels leaving encoder stage `k` (and its skip).
    pub fn encoder_width(&self, k: usize) -> usize {
        self.branch_widths(k).iter().sum()
    }

    pub fn bottleneck_width(&self) -> usize {
        let c3 = self.encoder_width(3);
        if self.use_lf_bottleneck || self.use_raa_bottleneck {
            2 * c3
        } else {
            c3
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| LfaError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One row of the ablation table.
#[derive(Clone, Copy, Debug)]
pub struct AblationRow {
    pub name: &'static str,
    pub description: &'static str,
    multiscale: bool,
    skips: bool,
    raa_skips: &'static [usize],
    lf: bool,
    raa_bottleneck: bool,
}

const fn row(
    name: &'static str,
    description: &'static str,
    multiscale: bool,
    skips: bool,
    raa_skips: &'static [usize],
    lf: bool,
    raa_bottleneck: bool,
) -> AblationRow {
    AblationRow {
        name,
        description,
        multiscale,
        skips,
        raa_skips,
        lf,
        raa_bottleneck,
    }
}

pub const ABLATION_ROWS: [AblationRow; 10] = [
    row("LU-NS", "lightweight U-Net, single 3x3 branch, no skips", false, false, &[], false, false),
    row("MLU-NS", "multiscale encoder, no skips", true, false, &[], false, false),
    row("MLU", "multiscale encoder with plain skips", true, true, &[], false, false),
    row("MLU+R-Skip", "attention on all three skips", true, true, &[1, 2, 3], false, false),
    row("MLU+LF-Bottleneck", "LiteFusion bottleneck", true, true, &[], true, false),
    row(
        "MLU+R-Skip+LF-Bottleneck",
        "attention on all skips and LiteFusion bottleneck",
        true,
        true,
        &[1, 2, 3],
        true,
        false,
    ),
    row(
        "MLU+LF+R-Bottleneck",
        "LiteFusion and region attention in the bottleneck",
        true,
        true,
        &[],
        true,
        true,
    ),
    row(
        "MLU+R13-Skip+LF+R-Bottleneck",
        "attention on skips 1 and 3, full bottleneck",
        true,
        true,
        &[1, 3],
        true,
        true,
    ),
    row(
        "MLU+R23-Skip+LF+R-Bottleneck",
        "attention on skips 2 and 3, full bottleneck",
        true,
        true,
        &[2, 3],
        true,
        true,
    ),
    row(
        "MLU+R12-Skip+LF+R-Bottleneck",
        "attention on skips 1 and 2, full bottleneck (the default network)",
        true,
        true,
        &[1, 2],
        true,
        true,
    ),
];

/// Alias for the last row.
pub const DEFAULT_ROW_ALIAS: &str = "LFA-Net";

impl AblationRow {
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            use_multiscale: self.multiscale,
            use_skips: self.skips,
            raa_on_skips: self.raa_skips.iter().copied().collect(),
            use_lf_bottleneck: self.lf,
            use_raa_bottleneck: self.raa_bottleneck,
            ..base.clone()
        }
    }

    /// Flag expansion, e.g. `multiscale=on skips=on raa_skips={1,2} ...`.
    pub fn flags(&self) -> String {
        let on = |b: bool| if b { "on" } else { "off" };
        let skips: Vec<String> = self.raa_skips.iter().map(|s| s.to_string()).collect();
        format!(
            "multiscale={} skips={} raa_skips={{{}}} lf_bottleneck={} raa_bottleneck={}",
            on(self.multiscale),
            on(self.skips),
            skips.join(","),
            on(self.lf),
            on(self.raa_bottleneck)
        )
    }
}

/// Looks up an ablation row by name, case-insensitively. `LFA-Net` names the
/// full model.
pub fn ablation_row(name: &str) -> Result<&'static AblationRow> {
    let wanted = if name.eq_ignore_ascii_case(DEFAULT_ROW_ALIAS) {
        ABLATION_ROWS[ABLATION_ROWS.len() - 1].name
    } else {
        name
    };
    ABLATION_ROWS
        .iter()
        .find(|r| r.name.eq_ignore_ascii_case(wanted))
        .ok_or_else(|| LfaError::Lookup {
            name: name.to_string(),
            valid: ABLATION_ROWS.iter().map(|r| r.name).collect::<Vec<_>>().join(", "),
        })
}

/// The default configuration with the switches of the named ablation row.
pub fn ablation_config(name: &str) -> Result<ModelConfig> {
    ablation_row(name).map(|r| r.apply(&ModelConfig::default()))
}
