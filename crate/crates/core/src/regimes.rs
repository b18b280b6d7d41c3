//! Training regimes: person-specific, general, transfer, short scratch, and
//! curriculum temporal pair sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::image::Image;
use crate::model::{LossBreakdown, ModelBundle, ModelConfig, Provenance, RegimeTag};
use crate::nn::AdamConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Psm,
    Gm,
    TransferFromGm,
    TransferFromPsm,
    ScratchShort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumShape {
    #[default]
    Linear,
    /// Jumps in `steps` equal increments.
    Staircase { steps: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub d_min: u32,
    pub d_max: u32,
    pub ramp_epochs: u32,
    #[serde(default)]
    pub shape: CurriculumShape,
}

impl CurriculumConfig {
    pub fn linear(d_min: u32, d_max: u32, ramp_epochs: u32) -> Self {
        Self {
            d_min,
            d_max,
            ramp_epochs,
            shape: CurriculumShape::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_min < 1 || self.d_min > self.d_max {
            return Err(Error::InvalidConfig(format!(
                "curriculum needs 1 <= d_min <= d_max, got {}..{}",
                self.d_min, self.d_max
            )));
        }
        if let CurriculumShape::Staircase { steps: 0 } = self.shape {
            return Err(Error::InvalidConfig("staircase needs at least one step".into()));
        }
        Ok(())
    }
}

/// Largest temporal distance allowed at `epoch`.
pub fn curriculum_distance(epoch: u32, c: &CurriculumConfig) -> u32 {
    if c.ramp_epochs == 0 || epoch >= c.ramp_epochs {
        return c.d_max;
    }
    let span = (c.d_max - c.d_min) as f64;
    let t = epoch as f64 / c.ramp_epochs as f64;
    let frac = match c.shape {
        CurriculumShape::Linear => t,
        CurriculumShape::Staircase { steps } => (t * steps as f64).floor() / steps as f64,
    };
    c.d_min + (span * frac).round() as u32
}

/// Draw an ordered index pair from one identity's sequence.
///
/// With a curriculum the distance is uniform on `[1, d(epoch)]` (clamped to
/// the sequence), otherwise the pair is uniform over all distinct pairs.
pub fn sample_pair<T>(
    sequence: &[T],
    epoch: u32,
    curriculum: Option<&CurriculumConfig>,
    rng: &mut impl Rng,
) -> Result<(usize, usize)> {
    let n = sequence.len();
    if n < 2 {
        return Err(Error::SequenceTooShort(n));
    }
    match curriculum {
        Some(c) => {
            let d_max = (curriculum_distance(epoch, c) as usize).min(n - 1).max(1);
            let d = rng.random_range(1..=d_max);
            let i = rng.random_range(0..n - d);
            Ok(if rng.random_bool(0.5) { (i, i + d) } else { (i + d, i) })
        }
        None => {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            Ok((i, j))
        }
    }
}

/// Indices kept when training on `fraction` of a video: a uniform stride.
pub fn subsample_indices(len: usize, fraction: f64) -> Vec<usize> {
    let keep = ((len as f64 * fraction).round() as usize).clamp(1.min(len), len);
    (0..keep).map(|k| k * len / keep).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegimeConfig {
    pub regime: Regime,
    pub epochs: u32,
    pub frame_fraction: f64,
    pub seed: u64,
    pub curriculum: Option<CurriculumConfig>,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Psm,
            epochs: 500,
            frame_fraction: 1.0,
            seed: 0,
            curriculum: None,
            batch_size: 8,
            adam: AdamConfig::default(),
        }
    }
}

impl RegimeConfig {
    /// Replication defaults: 500 epochs for psm/gm, 10 for transfer and scratch.
    pub fn for_regime(regime: Regime) -> Self {
        let epochs = match regime {
            Regime::Psm | Regime::Gm => 500,
            _ => 10,
        };
        Self {
            regime,
            epochs,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_fraction > 0.0 && self.frame_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "frame_fraction must lie in (0, 1], got {}",
                self.frame_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be finite and non-negative".into()));
        }
        if let Some(c) = &self.curriculum {
            c.validate()?;
        }
        Ok(())
    }
}

/// A trained bundle with its per-epoch mean losses.
#[derive(Debug, Clone)]
pub struct Trained {
    pub bundle: ModelBundle,
    pub losses: Vec<LossBreakdown>,
}

/// Called after every epoch with the zero-based epoch number.
pub type EpochHook<'a> = dyn FnMut(u32, &LossBreakdown, &ModelBundle) -> Result<()> + 'a;

/// Load the usable frames of `identity`, subsampled to `fraction`.
pub fn load_sequence(dataset: &Dataset, identity: &str, fraction: f64) -> Result<Vec<Image>> {
    let usable = dataset.usable_frames(identity)?;
    subsample_indices(usable.len(), fraction)
        .into_iter()
        .map(|i| usable[i].load_pixels())
        .collect()
}

fn check_dataset(dataset: &Dataset, config: &ModelConfig) -> Result<()> {
    let m = &dataset.meta;
    if m.frame_width != config.image_size || m.frame_height != config.image_size || m.channels != config.channels {
        return Err(Error::ConfigMismatch(format!(
            "dataset frames are {}x{}x{}, model expects {}x{}x{}",
            m.channels, m.frame_height, m.frame_width, config.channels, config.image_size, config.image_size
        )));
    }
    Ok(())
}

/// Core loop: `epochs` passes, each of as many pairs as there are frames,
/// in single-identity batches. Identities are picked proportionally to
/// their frame counts.
pub fn fit(
    bundle: &mut ModelBundle,
    sequences: &[Vec<Image>],
    config: &RegimeConfig,
    mut hook: Option<&mut EpochHook<'_>>,
) -> Result<Vec<LossBreakdown>> {
    config.validate()?;
    for s in sequences {
        if s.len() < 2 {
            return Err(Error::SequenceTooShort(s.len()));
        }
    }
    let total: usize = sequences.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_5A3B_1E00_0001);
    let mut opt = bundle.optimizer(config.adam);
    let start = bundle.provenance.total_epochs();
    let batches = total.div_ceil(config.batch_size);
    let mut history = Vec::with_capacity(config.epochs as usize);
    for e in 0..config.epochs {
        let mut sum = [0.0f64; 3];
        let mut weight = 0.0;
        let mut counted = 0usize;
        for b in 0..batches {
            let n = config.batch_size.min(total - b * config.batch_size);
            let mut pick = rng.random_range(0..total);
            let mut s = 0;
            while pick >= sequences[s].len() {
                pick -= sequences[s].len();
                s += 1;
            }
            let seq = &sequences[s];
            let mut pairs = Vec::with_capacity(n);
            for _ in 0..n {
                let (i, j) = sample_pair(seq, e, config.curriculum.as_ref(), &mut rng)?;
                pairs.push((&seq[i], &seq[j]));
            }
            let l = bundle.train_step(&pairs, &mut opt, start + e)?;
            sum[0] += l.reconstruction * n as f64;
            sum[1] += l.cycle_consistency * n as f64;
            sum[2] += l.neutral_symmetric * n as f64;
            weight = l.neutral_symmetric_weight;
            counted += n;
        }
        let c = counted as f64;
        let mean = LossBreakdown::new(sum[0] / c, sum[1] / c, sum[2] / c, weight);
        bundle.provenance.epochs += 1;
        log::debug!("epoch {e}: total loss {:.5}", mean.total);
        if let Some(h) = hook.as_deref_mut() {
            h(e, &mean, bundle)?;
        }
        history.push(mean);
    }
    Ok(history)
}

fn tag_for(config: &RegimeConfig) -> RegimeTag {
    match config.regime {
        Regime::Gm => RegimeTag::Gm,
        Regime::TransferFromGm | Regime::TransferFromPsm => RegimeTag::Transfer,
        Regime::ScratchShort => RegimeTag::Scratch,
        Regime::Psm if config.curriculum.is_some() => RegimeTag::Curriculum,
        Regime::Psm => RegimeTag::Psm,
    }
}

/// Train one model on one identity's frames.
pub fn train_psm(dataset: &Dataset, identity: &str, config: &RegimeConfig, model: &ModelConfig) -> Result<Trained> {
    train_psm_with(dataset, identity, config, model, None)
}

pub fn train_psm_with(
    dataset: &Dataset,
    identity: &str,
    config: &RegimeConfig,
    model: &ModelConfig,
    hook: Option<&mut EpochHook<'_>>,
) -> Result<Trained> {
    config.validate()?;
    check_dataset(dataset, model)?;
    let seq = load_sequence(dataset, identity, config.frame_fraction)?;
    let mut bundle = ModelBundle::new(model.clone(), config.seed)?;
    bundle.provenance = Provenance {
        regime: tag_for(config),
        identities: vec![identity.to_string()],
        epochs: 0,
        seed: config.seed,
        source: None,
    };
    let losses = fit(&mut bundle, &[seq], config, hook)?;
    Ok(Trained { bundle, losses })
}

/// Train one model on all identities; pairs never cross identities.
pub fn train_gm(dataset: &Dataset, config: &RegimeConfig, model: &ModelConfig) -> Result<Trained> {
    train_gm_with(dataset, config, model, None)
}

pub fn train_gm_with(
    dataset: &Dataset,
    config: &RegimeConfig,
    model: &ModelConfig,
    hook: Option<&mut EpochHook<'_>>,
) -> Result<Trained> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dataset(dataset, model)?;
    let ids = dataset.identities();
    let seqs = ids
        .iter()
        .map(|id| load_sequence(dataset, id, config.frame_fraction))
        .collect::<Result<Vec<_>>>()?;
    let mut bundle = ModelBundle::new(model.clone(), config.seed)?;
    bundle.provenance = Provenance {
        regime: RegimeTag::Gm,
        identities: ids,
        epochs: 0,
        seed: config.seed,
        source: None,
    };
    let losses = fit(&mut bundle, &seqs, config, hook)?;
    Ok(Trained { bundle, losses })
}

/// Fine-tune every parameter of `pretrained` on a new identity.
pub fn transfer(pretrained: &ModelBundle, dataset: &Dataset, identity: &str, config: &RegimeConfig) -> Result<Trained> {
    transfer_with(pretrained, dataset, identity, config, None)
}

pub fn transfer_with(
    pretrained: &ModelBundle,
    dataset: &Dataset,
    identity: &str,
    config: &RegimeConfig,
    hook: Option<&mut EpochHook<'_>>,
) -> Result<Trained> {
    config.validate()?;
    check_dataset(dataset, pretrained.config())?;
    let seq = load_sequence(dataset, identity, config.frame_fraction)?;
    let mut bundle = pretrained.clone();
    bundle.provenance = Provenance {
        regime: RegimeTag::Transfer,
        identities: vec![identity.to_string()],
        epochs: 0,
        seed: config.seed,
        source: Some(Box::new(pretrained.provenance.clone())),
    };
    if config.epochs == 0 {
        return Ok(Trained {
            bundle,
            losses: Vec::new(),
        });
    }
    let losses = fit(&mut bundle, &[seq], config, hook)?;
    Ok(Trained { bundle, losses })
}
