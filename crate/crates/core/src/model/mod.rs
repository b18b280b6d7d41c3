//! The facial-motion cycle model: a motion encoder plus generators that
//! remove the expression (to a neutral face) and put it back.

mod bundle;
mod config;
mod net;

pub use config::{DecayConfig, ModelConfig, RetrievalMode};
pub use net::{CycleNet, Encoder, Generator, LossBreakdown, TermWeights, CHARBONNIER_EPS};

use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::nn::{Adam, AdamConfig};
use crate::{Error, Result};

/// Fixed-length motion code produced by the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionEmbedding {
    pub code: Vec<f32>,
}

impl MotionEmbedding {
    pub fn dim(&self) -> usize {
        self.code.len()
    }

    pub fn zeros(dim: usize) -> Self {
        Self { code: vec![0.0; dim] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeTag {
    Untrained,
    Psm,
    Gm,
    Transfer,
    Scratch,
    Curriculum,
}

/// Where a bundle's parameters came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub regime: RegimeTag,
    pub identities: Vec<String>,
    pub epochs: u32,
    pub seed: u64,
    /// The bundle this one was fine-tuned from.
    pub source: Option<Box<Provenance>>,
}

impl Provenance {
    pub fn untrained(seed: u64) -> Self {
        Self {
            regime: RegimeTag::Untrained,
            identities: Vec::new(),
            epochs: 0,
            seed,
            source: None,
        }
    }

    /// Total epochs including those of source bundles.
    pub fn total_epochs(&self) -> u32 {
        self.epochs + self.source.as_ref().map_or(0, |s| s.total_epochs())
    }
}

/// A trained (or freshly initialized) model with its configuration and history.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub net: CycleNet<f32>,
    pub provenance: Provenance,
}

impl ModelBundle {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            net: CycleNet::new(config, seed)?,
            provenance: Provenance::untrained(seed),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn embedding_dim(&self) -> usize {
        self.net.config.embedding_dim
    }

    pub fn optimizer(&self, config: AdamConfig) -> Adam {
        let sizes: Vec<usize> = self.net.params().iter().map(|t| t.len()).collect();
        Adam::new(config, &sizes)
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        let c = &self.net.config;
        if img.channels != c.channels || img.height != c.image_size || img.width != c.image_size {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}x{}", c.channels, c.image_size, c.image_size),
                got: img.shape_string(),
            });
        }
        Ok(())
    }

    fn as_image(&self, data: Vec<f32>) -> Image {
        let c = &self.net.config;
        Image::from_data(c.channels, c.image_size, c.image_size, data).expect("network output has model shape")
    }

    pub fn encode_motion(&self, frame: &Image) -> Result<MotionEmbedding> {
        self.check_image(frame)?;
        Ok(MotionEmbedding {
            code: self.net.encode(&frame.data)?,
        })
    }

    pub fn remove_expression(&self, frame: &Image) -> Result<Image> {
        self.check_image(frame)?;
        Ok(self.as_image(self.net.remove(&frame.data)?))
    }

    pub fn retrieve_expression(&self, neutral: &Image, motion: &MotionEmbedding) -> Result<Image> {
        self.check_image(neutral)?;
        Ok(self.as_image(self.net.retrieve(&neutral.data, &motion.code)?))
    }

    pub fn compute_losses(&self, a: &Image, b: &Image, epoch: u32) -> Result<LossBreakdown> {
        self.check_image(a)?;
        self.check_image(b)?;
        self.net.losses(&a.data, &b.data, self.net.config.decay.weight(epoch))
    }

    /// One optimizer step on the mean loss over `pairs`.
    ///
    /// Pairs must come from a single identity; that is the caller's job.
    pub fn train_step(&mut self, pairs: &[(&Image, &Image)], opt: &mut Adam, epoch: u32) -> Result<LossBreakdown> {
        if pairs.is_empty() {
            return Err(Error::InvalidConfig("empty batch".into()));
        }
        let w = self.net.config.decay.weight(epoch);
        let mut grad = self.net.zeros_like();
        let scale = 1.0 / pairs.len() as f64;
        let mut sum = [0.0f64; 3];
        for (a, b) in pairs {
            self.check_image(a)?;
            self.check_image(b)?;
            let l = self
                .net
                .accumulate_grads(&a.data, &b.data, TermWeights::total(w), scale, &mut grad, w)?;
            sum[0] += l.reconstruction * scale;
            sum[1] += l.cycle_consistency * scale;
            sum[2] += l.neutral_symmetric * scale;
        }
        let loss = LossBreakdown::new(sum[0], sum[1], sum[2], w);
        let step = opt.steps() as usize;
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: epoch as usize,
                step,
                detail: format!("{loss:?}"),
            });
        }
        let grads = grad.params();
        opt.update(&mut self.net.params_mut(), &grads);
        if !self.net.all_finite() {
            let bad: Vec<&str> = self
                .net
                .params()
                .into_iter()
                .filter(|t| !t.all_finite())
                .map(|t| t.name.as_str())
                .collect();
            return Err(Error::NonFiniteLoss {
                epoch: epoch as usize,
                step,
                detail: format!("non-finite parameters after update: {}", bad.join(", ")),
            });
        }
        Ok(loss)
    }
}
