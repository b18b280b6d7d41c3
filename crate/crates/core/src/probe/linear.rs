use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::au::{channel_of, AuRecord};
use crate::nn::{Adam, AdamConfig, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: u32,
    pub lr: f64,
    pub seed: u64,
    pub threshold: f64,
    pub n_bootstrap: usize,
    /// AUs active less often than this in a person's video are not evaluated.
    pub min_active_rate: f64,
    pub train_fraction: f64,
    pub folds: usize,
    pub var_floor: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 1e-2,
            seed: 0,
            threshold: 0.5,
            n_bootstrap: 100,
            min_active_rate: 0.02,
            train_fraction: 0.8,
            folds: 3,
            var_floor: 1e-5,
        }
    }
}

/// Batch normalization with frozen statistics and a learned affine, followed
/// by a bias-free linear layer with one output per AU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// `[dim][aus.len()]`, row-major.
    pub weights: Vec<f64>,
    pub aus: Vec<u8>,
    /// Requested AUs dropped because their training column had one class.
    pub skipped: Vec<u8>,
    pub threshold: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `-[y log s(z) + (1-y) log(1-s(z))]`.
fn bce_with_logit(z: f64, y: bool) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    if y {
        softplus - z
    } else {
        softplus
    }
}

impl ProbeModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn normalized(&self, x: &[f32]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(d, &v)| (v as f64 - self.mean[d]) / self.var[d].sqrt() * self.gamma[d] + self.beta[d])
            .collect()
    }

    /// Logits, one per fitted AU.
    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let z = self.normalized(x);
        let k = self.aus.len();
        let mut out = vec![0.0; k];
        for (d, &zd) in z.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&self.weights[d * k..(d + 1) * k]) {
                *o += zd * w;
            }
        }
        out
    }

    pub fn predict(&self, x: &[f32]) -> Vec<bool> {
        self.logits(x).into_iter().map(|z| sigmoid(z) >= self.threshold).collect()
    }

    pub fn bce(&self, embeddings: &[Vec<f32>], labels: &[AuRecord]) -> f64 {
        let chans: Vec<usize> = self.aus.iter().map(|&a| channel_of(a).unwrap()).collect();
        let mut sum = 0.0;
        for (x, l) in embeddings.iter().zip(labels) {
            for (z, &c) in self.logits(x).into_iter().zip(&chans) {
                sum += bce_with_logit(z, l.binary()[c]);
            }
        }
        sum / (embeddings.len() * chans.len()).max(1) as f64
    }
}

/// Fit a probe for the requested AUs. Columns with a single class are
/// skipped and listed in `skipped`; if nothing is left the first offending
/// AU is reported.
pub fn fit_probe(embeddings: &[Vec<f32>], labels: &[AuRecord], aus: &[u8], config: &ProbeConfig) -> Result<ProbeModel> {
    if embeddings.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: embeddings.len(),
            right: labels.len(),
        });
    }
    let n = embeddings.len();
    if n < 10 {
        return Err(Error::TooFewSamples { need: 10, got: n });
    }
    let dim = embeddings[0].len();
    if let Some(bad) = embeddings.iter().find(|e| e.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let mut fitted = Vec::new();
    let mut skipped = Vec::new();
    for &au in aus {
        let c = channel_of(au).ok_or_else(|| Error::InvalidParams(format!("AU{au} is not annotated")))?;
        let pos = labels.iter().filter(|l| l.binary()[c]).count();
        if pos == 0 || pos == n {
            log::warn!("AU{au}: single-class training column, skipped");
            skipped.push(au);
        } else {
            fitted.push(au);
        }
    }
    if fitted.is_empty() {
        return Err(Error::DegenerateLabels {
            au: skipped.first().copied().unwrap_or(0),
        });
    }
    let chans: Vec<usize> = fitted.iter().map(|&a| channel_of(a).unwrap()).collect();
    let k = fitted.len();

    let mut mean = vec![0.0; dim];
    for e in embeddings {
        for (m, &v) in mean.iter_mut().zip(e) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for e in embeddings {
        for ((s, &v), m) in var.iter_mut().zip(e).zip(&mean) {
            *s += (v as f64 - m).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v = (*v / n as f64).max(config.var_floor));
    let xhat: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| e.iter().enumerate().map(|(d, &v)| (v as f64 - mean[d]) / var[d].sqrt()).collect())
        .collect();
    let targets: Vec<Vec<f64>> = labels
        .iter()
        .map(|l| chans.iter().map(|&c| if l.binary()[c] { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w = Tensor::<f64>::uniform("probe.weight", vec![dim, k], (1.0 / dim as f64).sqrt(), &mut rng);
    let mut gamma = Tensor::<f64> {
        name: "probe.gamma".into(),
        shape: vec![dim],
        data: vec![1.0; dim],
    };
    let mut beta = Tensor::<f64>::zeros("probe.beta", vec![dim]);
    let mut opt = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &[dim * k, dim, dim],
    );
    let scale = 1.0 / (n * k) as f64;
    let mut z = vec![0.0; dim];
    for _ in 0..config.epochs {
        let mut gw = Tensor::<f64>::zeros("g.weight", vec![dim, k]);
        let mut gg = Tensor::<f64>::zeros("g.gamma", vec![dim]);
        let mut gb = Tensor::<f64>::zeros("g.beta", vec![dim]);
        for (xh, t) in xhat.iter().zip(&targets) {
            for d in 0..dim {
                z[d] = xh[d] * gamma.data[d] + beta.data[d];
            }
            let mut dl = vec![0.0; k];
            for (o, dlo) in dl.iter_mut().enumerate() {
                let logit: f64 = (0..dim).map(|d| z[d] * w.data[d * k + o]).sum();
                *dlo = (sigmoid(logit) - t[o]) * scale;
            }
            for d in 0..dim {
                let row = &w.data[d * k..(d + 1) * k];
                let grow = &mut gw.data[d * k..(d + 1) * k];
                let mut acc = 0.0;
                for o in 0..k {
                    grow[o] += z[d] * dl[o];
                    acc += row[o] * dl[o];
                }
                gg.data[d] += acc * xh[d];
                gb.data[d] += acc;
            }
        }
        opt.update(&mut [&mut w, &mut gamma, &mut beta], &[&gw, &gg, &gb]);
    }
    Ok(ProbeModel {
        mean,
        var,
        gamma: gamma.data,
        beta: beta.data,
        weights: w.data,
        aus: fitted,
        skipped,
        threshold: config.threshold,
    })
}
