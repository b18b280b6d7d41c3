use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use psmlab::align::AlignConfig;
use psmlab::cluster::SweepConfig;
use psmlab::data::SynthConfig;
use psmlab::model::ModelConfig;
use psmlab::probe::ProbeConfig;
use psmlab::regimes::RegimeConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferEvalConfig {
    /// Fraction of the target person's frames used for fine-tuning.
    pub fraction: f64,
    pub epochs: u32,
    /// Frames used for the neutral-consistency distance (evenly spaced).
    pub consistency_frames: usize,
}

impl Default for TransferEvalConfig {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            epochs: 10,
            consistency_frames: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub n_noise: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { n_noise: 100, seed: 0 }
    }
}

/// Everything a pipeline run can be configured with. Loaded from one JSON
/// file; command-line flags override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub align: AlignConfig,
    pub model: ModelConfig,
    pub train: RegimeConfig,
    pub probe: ProbeConfig,
    pub sweep: SweepConfig,
    pub transfer: TransferEvalConfig,
    pub noise: NoiseConfig,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let cfg = serde_json::from_str(&text).map_err(psmlab::Error::from)?;
                Ok(cfg)
            }
        }
    }
}
