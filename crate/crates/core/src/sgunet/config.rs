use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::pooling;

/// Architecture hyperparameters. Missing fields in a config file fall back
/// to the defaults (two encoder steps, two steps per stage, one ratio-2 stage).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub latent: usize,
    /// Hidden width of every MLP.
    pub hidden: usize,
    pub hidden_layers: usize,
    /// GNBs per Encoder processor.
    pub m_enc: usize,
    /// GNBs per GUnet processor.
    pub m_gu: usize,
    /// Empty selects the flat (baseline) processor.
    pub pooling_ratios: Vec<usize>,
    /// GNBs of the flat processor; only used in baseline mode.
    pub m_proc: usize,
    pub noise_std: f64,
    pub world_radius: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            latent: 128,
            hidden: 128,
            hidden_layers: 2,
            m_enc: 2,
            m_gu: 2,
            pooling_ratios: vec![2],
            m_proc: 0,
            noise_std: 0.05,
            world_radius: 0.05,
        }
    }
}

impl ModelConfig {
    /// MGN-style configuration: `m_proc` flat GNBs, no pooling.
    pub fn baseline(m_enc: usize, m_proc: usize) -> Self {
        Self {
            m_enc,
            m_gu: 0,
            pooling_ratios: Vec::new(),
            m_proc,
            ..Self::default()
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.pooling_ratios.is_empty()
    }

    pub fn num_stages(&self) -> usize {
        self.pooling_ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return config_err(format!("dim must be 2 or 3, got {}", self.dim));
        }
        if self.latent == 0 || self.hidden == 0 {
            return config_err("latent and hidden widths must be positive");
        }
        if self.pooling_ratios.contains(&0) {
            return config_err("pooling ratios must be positive");
        }
        if !self.is_baseline() && self.m_proc != 0 {
            return config_err("m_proc is only meaningful without pooling stages");
        }
        if !(self.noise_std >= 0.0) || !(self.world_radius >= 0.0) {
            return config_err("noise_std and world_radius must be non-negative");
        }
        Ok(())
    }

    pub fn receptive_field(&self) -> usize {
        if self.is_baseline() {
            pooling::receptive_field(self.m_enc, self.m_proc, &[])
        } else {
            pooling::receptive_field(self.m_enc, self.m_gu, &self.pooling_ratios)
        }
    }

    /// True when the two configs produce GNBs with identical tensor shapes.
    pub fn gnb_compatible(&self, other: &Self) -> bool {
        self.latent == other.latent
            && self.hidden == other.hidden
            && self.hidden_layers == other.hidden_layers
    }
}
