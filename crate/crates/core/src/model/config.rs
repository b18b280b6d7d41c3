use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Generate the expressive face as a residual on the neutral face.
    #[default]
    Direct,
    /// Flow-field warping of the neutral face. Not implemented.
    Warp,
}

/// Exponential decay of the neutral-face symmetry weight, floored at `w_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayConfig {
    pub gamma: f64,
    pub w_min: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            w_min: 0.05,
        }
    }
}

impl DecayConfig {
    pub fn weight(&self, epoch: u32) -> f64 {
        self.gamma.powi(epoch as i32).max(self.w_min).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub embedding_dim: usize,
    /// Encoder channel widths; each stage halves the spatial size.
    pub widths: Vec<usize>,
    /// Init gain of the generators' output layers.
    pub output_gain: f64,
    pub decay: DecayConfig,
    pub retrieval: RetrievalMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 3,
            embedding_dim: 256,
            widths: vec![16, 32, 64, 64],
            output_gain: 0.1,
            decay: DecayConfig::default(),
            retrieval: RetrievalMode::Direct,
        }
    }
}

impl ModelConfig {
    /// Small configuration for 32x32 frames.
    pub fn tiny(embedding_dim: usize) -> Self {
        Self {
            image_size: 32,
            embedding_dim,
            widths: vec![8, 16, 16],
            ..Self::default()
        }
    }

    pub fn bottleneck_size(&self) -> usize {
        self.image_size >> self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidConfig("widths must be non-empty and positive".into()));
        }
        if self.embedding_dim == 0 || self.channels == 0 {
            return Err(Error::InvalidConfig("embedding_dim and channels must be positive".into()));
        }
        let div = 1usize << self.widths.len();
        if self.image_size < div || self.image_size % div != 0 {
            return Err(Error::InvalidConfig(format!(
                "image_size {} must be a multiple of {div} for {} stages",
                self.image_size,
                self.widths.len()
            )));
        }
        if !(self.decay.gamma > 0.0 && self.decay.gamma <= 1.0 && self.decay.w_min > 0.0 && self.decay.w_min <= 1.0) {
            return Err(Error::InvalidConfig("decay gamma and w_min must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_starts_full_and_floors() {
        let d = DecayConfig::default();
        assert_eq!(d.weight(0), 1.0);
        assert!((d.weight(10) - 0.98f64.powi(10)).abs() < 1e-15);
        assert_eq!(d.weight(10_000), 0.05);
    }

    #[test]
    fn rejects_indivisible_size() {
        let cfg = ModelConfig {
            image_size: 30,
            ..ModelConfig::tiny(8)
        };
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::tiny(8).validate().is_ok());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
