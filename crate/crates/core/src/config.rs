//! The run configuration file: one TOML document with `[model]`, `[loss]`,
//! `[adam]` and `[train]` tables. Missing tables and keys take their
//! defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LfaError, Result};
use crate::model::ModelConfig;
use crate::training::{AdamConfig, DiceLossConfig, TrainRunConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LfaConfig {
    pub model: ModelConfig,
    pub loss: DiceLossConfig,
    pub adam: AdamConfig,
    pub train: TrainRunConfig,
}

impl LfaConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.adam.validate()?;
        self.train.validate()
    }

    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: LfaConfig = toml::from_str(text).map_err(|e| LfaError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LfaError::config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LfaError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            LfaError::Config(m) => LfaError::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
