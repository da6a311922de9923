use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use sgunet_core::sgunet::ModelConfig;
use sgunet_core::simgen::{Family, SplitRatios};
use sgunet_core::trainer::TrainConfig;

/// Contents of the TOML run configuration. Every section is optional.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gen: GenConfig,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub family: Family,
    pub count: usize,
    pub steps: usize,
    pub seed: u64,
    pub split_seed: u64,
    pub ratios: SplitRatios,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            family: Family::Broad,
            count: 200,
            steps: 16,
            seed: 0,
            split_seed: 0,
            ratios: SplitRatios::default(),
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| sgunet_core::Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }
}
