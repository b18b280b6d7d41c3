//! Qualitative checks on generated neutral faces and figure-style report
//! rendering.

mod figures;
mod svg;

pub use figures::{
    render, ClusterSubject, CurveSeries, FigureOutput, FigureStyle, MethodResult, TransferApproach,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::model::ModelBundle;
use crate::probe::percentile;
use crate::{Error, Result};

/// Distances are reported with pixel values scaled to `[0, 255]`.
pub const PIXEL_SCALE: f64 = 255.0;

/// Mean over pixels of the euclidean distance between colour vectors, in
/// `[0, 255]` units.
pub fn pixel_distance(a: &Image, b: &Image) -> Result<f64> {
    if (a.channels, a.height, a.width) != (b.channels, b.height, b.width) {
        return Err(Error::ShapeMismatch {
            expected: a.shape_string(),
            got: b.shape_string(),
        });
    }
    let plane = a.height * a.width;
    if plane == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for p in 0..plane {
        let mut s = 0.0;
        for c in 0..a.channels {
            let d = (a.data[c * plane + p] - b.data[c * plane + p]) as f64 * PIXEL_SCALE;
            s += d * d;
        }
        total += s.sqrt();
    }
    Ok(total / plane as f64)
}

/// Average pairwise distance between the neutral faces generated for `frames`.
pub fn neutral_consistency(bundle: &ModelBundle, frames: &[Image]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::TooFewFrames {
            need: 2,
            got: frames.len(),
        });
    }
    let neutrals = frames
        .iter()
        .map(|f| bundle.remove_expression(f))
        .collect::<Result<Vec<_>>>()?;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..neutrals.len() {
        for j in i + 1..neutrals.len() {
            sum += pixel_distance(&neutrals[i], &neutrals[j])?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCheckReport {
    pub n_noise: usize,
    pub n_reference: usize,
    /// 95th percentile of real-frame neutral distances to the mean neutral.
    pub threshold: f64,
    pub reference_distances: Vec<f64>,
    pub noise_distances: Vec<f64>,
    /// Fraction of noise inputs whose neutral lies beyond `threshold`.
    pub fraction_beyond: f64,
    pub passed: bool,
    /// The bundle had never been trained.
    pub untrained: bool,
}

pub const NOISE_PASS_FRACTION: f64 = 0.95;

/// Feed uniform noise through expression removal and check that the
/// outputs do not look like this subject's neutral face.
pub fn noise_check(bundle: &ModelBundle, n_noise: usize, reference: &[Image], seed: u64) -> Result<NoiseCheckReport> {
    if n_noise == 0 {
        return Err(Error::InvalidParams("noise_check needs at least one noise image".into()));
    }
    if reference.len() < 2 {
        return Err(Error::TooFewFrames {
            need: 2,
            got: reference.len(),
        });
    }
    let untrained = bundle.provenance.total_epochs() == 0;
    if untrained {
        log::warn!("noise check on an untrained bundle");
    }
    let neutrals = reference
        .iter()
        .map(|f| bundle.remove_expression(f))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = Image::new(neutrals[0].channels, neutrals[0].height, neutrals[0].width);
    for n in &neutrals {
        for (m, v) in mean.data.iter_mut().zip(&n.data) {
            *m += v / neutrals.len() as f32;
        }
    }
    let reference_distances = neutrals
        .iter()
        .map(|n| pixel_distance(n, &mean))
        .collect::<Result<Vec<_>>>()?;
    let mut sorted = reference_distances.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = percentile(&sorted, 95.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_distances = Vec::with_capacity(n_noise);
    for _ in 0..n_noise {
        let mut img = Image::new(mean.channels, mean.height, mean.width);
        img.data.iter_mut().for_each(|v| *v = rng.random::<f32>());
        noise_distances.push(pixel_distance(&bundle.remove_expression(&img)?, &mean)?);
    }
    let beyond = noise_distances.iter().filter(|&&d| d > threshold).count();
    let fraction_beyond = beyond as f64 / n_noise as f64;
    Ok(NoiseCheckReport {
        n_noise,
        n_reference: reference.len(),
        threshold,
        reference_distances,
        noise_distances,
        fraction_beyond,
        passed: fraction_beyond >= NOISE_PASS_FRACTION,
        untrained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn frames(n: usize, size: usize) -> Vec<Image> {
        (0..n)
            .map(|i| {
                let mut img = Image::new(3, size, size);
                img.data.iter_mut().enumerate().for_each(|(k, v)| *v = ((k * 7 + i * 13) % 17) as f32 / 17.0);
                img
            })
            .collect()
    }

    #[test]
    fn distance_units() {
        let a = Image::filled(3, 2, 2, 0.0);
        let b = Image::filled(3, 2, 2, 1.0);
        assert!((pixel_distance(&a, &b).unwrap() - 255.0 * 3f64.sqrt()).abs() < 1e-9);
        assert_eq!(pixel_distance(&a, &a).unwrap(), 0.0);
        assert!(pixel_distance(&a, &Image::new(3, 2, 3)).is_err());
    }

    #[test]
    fn consistency_basics() {
        let bundle = ModelBundle::new(ModelConfig::tiny(4), 1).unwrap();
        let f = frames(4, 32);
        let same = vec![f[0].clone(), f[0].clone(), f[0].clone()];
        assert_eq!(neutral_consistency(&bundle, &same).unwrap(), 0.0);
        let two = neutral_consistency(&bundle, &f[..2]).unwrap();
        let d = pixel_distance(&bundle.remove_expression(&f[0]).unwrap(), &bundle.remove_expression(&f[1]).unwrap()).unwrap();
        assert!((two - d).abs() < 1e-12);
        let mut rev = f.clone();
        rev.reverse();
        let a = neutral_consistency(&bundle, &f).unwrap();
        let b = neutral_consistency(&bundle, &rev).unwrap();
        assert!((a - b).abs() < 1e-9);
        assert!(matches!(neutral_consistency(&bundle, &f[..1]), Err(Error::TooFewFrames { .. })));
    }

    #[test]
    fn noise_check_rejects_zero() {
        let bundle = ModelBundle::new(ModelConfig::tiny(4), 1).unwrap();
        assert!(noise_check(&bundle, 0, &frames(3, 32), 0).is_err());
        let r = noise_check(&bundle, 5, &frames(3, 32), 0).unwrap();
        assert!(r.untrained);
        assert_eq!(r.noise_distances.len(), 5);
    }
}
