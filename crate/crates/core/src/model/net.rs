use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, RetrievalMode};
use crate::nn::{elu_backward, elu_inplace, Conv2d, ConvTranspose2d, Linear, Scalar, Tensor};
use crate::{Error, Result};

/// Smoothing constant of the Charbonnier pixel penalty.
pub const CHARBONNIER_EPS: f64 = 1e-2;

#[inline]
fn rho<T: Scalar>(d: T, eps: T) -> T {
    (d * d + eps * eps).sqrt() - eps
}

#[inline]
fn rho_grad<T: Scalar>(d: T, eps: T) -> T {
    d / (d * d + eps * eps).sqrt()
}

/// Convolutional encoder: strided convs with ELU, then a linear map to the code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder<T> {
    pub convs: Vec<Conv2d<T>>,
    pub fc: Linear<T>,
}

/// Bias-free decoder from a code to an image-sized residual.
///
/// Without biases a zero code maps to a zero residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator<T> {
    pub fc: Linear<T>,
    pub deconvs: Vec<ConvTranspose2d<T>>,
    base: usize,
    base_c: usize,
}

/// Activations kept for the backward pass; `acts[0]` is the input.
struct Trace<T> {
    acts: Vec<Vec<T>>,
}

impl<T: Scalar> Encoder<T> {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut convs = Vec::new();
        let mut in_c = cfg.channels;
        for (i, &w) in cfg.widths.iter().enumerate() {
            convs.push(Conv2d::new(&format!("encoder.conv{i}"), in_c, w, 4, 2, 1, true, 1.0, rng));
            in_c = w;
        }
        let b = cfg.bottleneck_size();
        let fc = Linear::new("encoder.fc", in_c * b * b, cfg.embedding_dim, true, 1.0, rng);
        Self { convs, fc }
    }

    fn forward(&self, x: &[T], size: usize) -> (Vec<T>, Trace<T>) {
        let mut acts = vec![x.to_vec()];
        let mut s = size;
        for conv in &self.convs {
            let mut y = conv.forward(acts.last().unwrap(), s, s);
            elu_inplace(&mut y);
            s = conv.out_size(s, s).0;
            acts.push(y);
        }
        let code = self.fc.forward(acts.last().unwrap());
        (code, Trace { acts })
    }

    fn backward(&self, tr: &Trace<T>, size: usize, dcode: &[T], grad: &mut Encoder<T>) {
        let mut d = self.fc.backward(tr.acts.last().unwrap(), dcode, &mut grad.fc, true).unwrap();
        let sizes: Vec<usize> = std::iter::successors(Some(size), |s| Some(s / 2)).take(self.convs.len()).collect();
        for i in (0..self.convs.len()).rev() {
            elu_backward(&tr.acts[i + 1], &mut d);
            let s = sizes[i];
            match self.convs[i].backward(&tr.acts[i], s, s, &d, &mut grad.convs[i], i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }
}

impl<T: Scalar> Generator<T> {
    fn new(name: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let b = cfg.bottleneck_size();
        let last = *cfg.widths.last().unwrap();
        let fc = Linear::new(&format!("{name}.fc"), cfg.embedding_dim, last * b * b, false, 1.0, rng);
        let mut deconvs = Vec::new();
        let n = cfg.widths.len();
        for i in (0..n).rev() {
            let in_c = cfg.widths[i];
            let out_c = if i == 0 { cfg.channels } else { cfg.widths[i - 1] };
            let gain = if i == 0 { cfg.output_gain } else { 1.0 };
            deconvs.push(ConvTranspose2d::new(&format!("{name}.deconv{}", n - 1 - i), in_c, out_c, 4, 2, 1, gain, rng));
        }
        Self {
            fc,
            deconvs,
            base: b,
            base_c: last,
        }
    }

    fn forward(&self, code: &[T]) -> (Vec<T>, Trace<T>) {
        let mut h = self.fc.forward(code);
        elu_inplace(&mut h);
        let mut acts = vec![code.to_vec(), h];
        let mut s = self.base;
        let n = self.deconvs.len();
        for (i, dc) in self.deconvs.iter().enumerate() {
            let mut y = dc.forward(acts.last().unwrap(), s, s);
            if i + 1 < n {
                elu_inplace(&mut y);
            }
            s = dc.out_size(s, s).0;
            acts.push(y);
        }
        (acts.last().unwrap().clone(), Trace { acts })
    }

    fn backward(&self, tr: &Trace<T>, dout: &[T], grad: &mut Generator<T>) -> Vec<T> {
        let n = self.deconvs.len();
        let mut d = dout.to_vec();
        for i in (0..n).rev() {
            if i + 1 < n {
                elu_backward(&tr.acts[i + 2], &mut d);
            }
            let s = self.base << i;
            d = self.deconvs[i].backward(&tr.acts[i + 1], s, s, &d, &mut grad.deconvs[i], true).unwrap();
        }
        debug_assert_eq!(d.len(), self.base_c * self.base * self.base);
        elu_backward(&tr.acts[1], &mut d);
        self.fc.backward(&tr.acts[0], &d, &mut grad.fc, true).unwrap()
    }
}

/// Per-term loss values for one pair or averaged over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub cycle_consistency: f64,
    pub neutral_symmetric: f64,
    pub neutral_symmetric_weight: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(reconstruction: f64, cycle_consistency: f64, neutral_symmetric: f64, weight: f64) -> Self {
        Self {
            reconstruction,
            cycle_consistency,
            neutral_symmetric,
            neutral_symmetric_weight: weight,
            total: reconstruction + cycle_consistency + weight * neutral_symmetric,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.reconstruction.is_finite()
            && self.cycle_consistency.is_finite()
            && self.neutral_symmetric.is_finite()
            && self.total.is_finite()
    }
}

/// Multipliers applied to each loss term when computing gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub reconstruction: f64,
    pub cycle: f64,
    pub symmetric: f64,
}

impl TermWeights {
    pub fn total(symmetric_weight: f64) -> Self {
        Self {
            reconstruction: 1.0,
            cycle: 1.0,
            symmetric: symmetric_weight,
        }
    }
}

/// Encoder plus expression-removal and expression-retrieval generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleNet<T> {
    pub config: ModelConfig,
    pub encoder: Encoder<T>,
    pub remover: Generator<T>,
    pub retriever: Generator<T>,
}

fn clamp_unit<T: Scalar>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| x.max(T::zero()).min(T::one())).collect()
}

/// Gradient of `clamp(v, 0, 1)`: passes only strictly inside the interval.
fn clamp_mask<T: Scalar>(pre: &[T], grad: &mut [T]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= T::zero() || p >= T::one() {
            *g = T::zero();
        }
    }
}

fn add<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(x, y)| *x + *y).collect()
}

/// Index of the horizontally mirrored pixel in a CHW buffer.
fn mirror_index(i: usize, size: usize) -> usize {
    let x = i % size;
    i - x + (size - 1 - x)
}

fn symmetric_loss<T: Scalar>(n: &[T], size: usize, eps: T) -> T {
    let p = T::of(n.len() as f64);
    n.iter().enumerate().map(|(i, &v)| rho(v - n[mirror_index(i, size)], eps)).sum::<T>() / p
}

impl<T: Scalar> CycleNet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.retrieval == RetrievalMode::Warp {
            return Err(Error::Unsupported("warp-field expression retrieval".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(&config, &mut rng);
        let remover = Generator::new("remover", &config, &mut rng);
        let retriever = Generator::new("retriever", &config, &mut rng);
        Ok(Self {
            config,
            encoder,
            remover,
            retriever,
        })
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for c in &self.encoder.convs {
            out.push(&c.weight);
            if let Some(b) = &c.bias {
                out.push(b);
            }
        }
        out.push(&self.encoder.fc.weight);
        if let Some(b) = &self.encoder.fc.bias {
            out.push(b);
        }
        for g in [&self.remover, &self.retriever] {
            out.push(&g.fc.weight);
            for d in &g.deconvs {
                out.push(&d.weight);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for c in self.encoder.convs.iter_mut() {
            out.push(&mut c.weight);
            if let Some(b) = c.bias.as_mut() {
                out.push(b);
            }
        }
        out.push(&mut self.encoder.fc.weight);
        if let Some(b) = self.encoder.fc.bias.as_mut() {
            out.push(b);
        }
        for g in [&mut self.remover, &mut self.retriever] {
            out.push(&mut g.fc.weight);
            for d in g.deconvs.iter_mut() {
                out.push(&mut d.weight);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.params_mut() {
            t.fill_zero();
        }
        z
    }

    pub fn cast<U: Scalar>(&self) -> CycleNet<U> {
        let mut out = CycleNet::<U>::new(self.config.clone(), 0).expect("config already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|t| t.all_finite())
    }

    fn pixel_len(&self) -> usize {
        self.config.channels * self.config.image_size * self.config.image_size
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.pixel_len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", self.pixel_len()),
                got: format!("{} values", x.len()),
            });
        }
        Ok(())
    }

    pub fn encode(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.encoder.forward(x, self.config.image_size).0)
    }

    pub fn remove(&self, x: &[T]) -> Result<Vec<T>> {
        let code = self.encode(x)?;
        let res = self.remover.forward(&code).0;
        Ok(clamp_unit(&add(x, &res)))
    }

    pub fn retrieve(&self, neutral: &[T], code: &[T]) -> Result<Vec<T>> {
        self.check_input(neutral)?;
        if code.len() != self.config.embedding_dim {
            return Err(Error::DimMismatch {
                expected: self.config.embedding_dim,
                got: code.len(),
            });
        }
        let res = self.retriever.forward(code).0;
        Ok(clamp_unit(&add(neutral, &res)))
    }

    /// Loss terms for one same-identity pair, without gradients.
    pub fn losses(&self, a: &[T], b: &[T], symmetric_weight: f64) -> Result<LossBreakdown> {
        self.check_input(a)?;
        self.check_input(b)?;
        let mut scratch = self.zeros_like();
        Ok(self.pair_pass(a, b, None, &mut scratch, symmetric_weight))
    }

    /// Loss terms for one pair; gradients of the `weights`-combined loss,
    /// scaled by `scale`, are accumulated into `grad`.
    pub fn accumulate_grads(
        &self,
        a: &[T],
        b: &[T],
        weights: TermWeights,
        scale: f64,
        grad: &mut CycleNet<T>,
        symmetric_weight: f64,
    ) -> Result<LossBreakdown> {
        self.check_input(a)?;
        self.check_input(b)?;
        Ok(self.pair_pass(a, b, Some((weights, scale)), grad, symmetric_weight))
    }

    fn pair_pass(
        &self,
        a: &[T],
        b: &[T],
        backward: Option<(TermWeights, f64)>,
        grad: &mut CycleNet<T>,
        symmetric_weight: f64,
    ) -> LossBreakdown {
        let size = self.config.image_size;
        let eps = T::of(CHARBONNIER_EPS);
        let p = a.len();
        let pf = T::of(p as f64);

        let (ca, tea) = self.encoder.forward(a, size);
        let (cb, teb) = self.encoder.forward(b, size);
        let (rma, trma) = self.remover.forward(&ca);
        let (rmb, trmb) = self.remover.forward(&cb);
        let na_pre = add(a, &rma);
        let nb_pre = add(b, &rmb);
        let na = clamp_unit(&na_pre);
        let nb = clamp_unit(&nb_pre);
        let (rta, trta) = self.retriever.forward(&ca);
        let (rtb, trtb) = self.retriever.forward(&cb);
        // a is rebuilt from b's neutral face and a's code, and vice versa
        let ra_pre = add(&nb, &rta);
        let rb_pre = add(&na, &rtb);
        let ra = clamp_unit(&ra_pre);
        let rb = clamp_unit(&rb_pre);

        let rec_a = ra.iter().zip(a).map(|(&r, &x)| rho(r - x, eps)).sum::<T>() / pf;
        let rec_b = rb.iter().zip(b).map(|(&r, &x)| rho(r - x, eps)).sum::<T>() / pf;
        let rec = (rec_a + rec_b) * T::of(0.5);
        let cyc = na.iter().zip(&nb).map(|(&u, &v)| rho(u - v, eps)).sum::<T>() / pf;
        let sym = (symmetric_loss(&na, size, eps) + symmetric_loss(&nb, size, eps)) * T::of(0.5);
        let breakdown = LossBreakdown::new(rec.f64(), cyc.f64(), sym.f64(), symmetric_weight);

        let Some((w, scale)) = backward else {
            return breakdown;
        };
        let wr = T::of(w.reconstruction * scale * 0.5) / pf;
        let wc = T::of(w.cycle * scale) / pf;
        let ws = T::of(w.symmetric * scale) / pf;

        let mut dra: Vec<T> = ra.iter().zip(a).map(|(&r, &x)| wr * rho_grad(r - x, eps)).collect();
        let mut drb: Vec<T> = rb.iter().zip(b).map(|(&r, &x)| wr * rho_grad(r - x, eps)).collect();
        clamp_mask(&ra_pre, &mut dra);
        clamp_mask(&rb_pre, &mut drb);

        let mut dna = drb.clone();
        let mut dnb = dra.clone();
        for i in 0..p {
            let g = wc * rho_grad(na[i] - nb[i], eps);
            dna[i] = dna[i] + g;
            dnb[i] = dnb[i] - g;
            // d/dn of mean rho(n - mirror(n)) is 2 rho'(n - mirror(n)) / P; halved by the pair average
            let m = mirror_index(i, size);
            dna[i] = dna[i] + ws * rho_grad(na[i] - na[m], eps);
            dnb[i] = dnb[i] + ws * rho_grad(nb[i] - nb[m], eps);
        }
        clamp_mask(&na_pre, &mut dna);
        clamp_mask(&nb_pre, &mut dnb);

        let mut dca = self.remover.backward(&trma, &dna, &mut grad.remover);
        let mut dcb = self.remover.backward(&trmb, &dnb, &mut grad.remover);
        let ga = self.retriever.backward(&trta, &dra, &mut grad.retriever);
        let gb = self.retriever.backward(&trtb, &drb, &mut grad.retriever);
        for (d, g) in dca.iter_mut().zip(&ga) {
            *d = *d + *g;
        }
        for (d, g) in dcb.iter_mut().zip(&gb) {
            *d = *d + *g;
        }
        self.encoder.backward(&tea, size, &dca, &mut grad.encoder);
        self.encoder.backward(&teb, size, &dcb, &mut grad.encoder);
        breakdown
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_size: 8,
            channels: 3,
            embedding_dim: 4,
            widths: vec![2, 2],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_code_gives_input_as_neutral() {
        let net = CycleNet::<f64>::new(tiny(), 1).unwrap();
        let x: Vec<f64> = (0..192).map(|i| 0.2 + 0.6 * ((i * 37 % 101) as f64 / 101.0)).collect();
        let out = net.retrieve(&x, &[0.0; 4]).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn identical_pair_has_zero_cycle_loss() {
        let net = CycleNet::<f32>::new(tiny(), 2).unwrap();
        let x: Vec<f32> = (0..192).map(|i| (i % 7) as f32 / 7.0).collect();
        let l = net.losses(&x, &x, 1.0).unwrap();
        assert_eq!(l.cycle_consistency, 0.0);
        assert!(l.reconstruction >= 0.0 && l.neutral_symmetric >= 0.0);
        assert!((l.total - (l.reconstruction + l.cycle_consistency + l.neutral_symmetric)).abs() < 1e-6);
    }

    #[test]
    fn mirror_symmetric_neutral_scores_zero() {
        let mut img = vec![0.0f64; 3 * 8 * 8];
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..4 {
                    let v = 0.1 * (c + y + x) as f64;
                    img[(c * 8 + y) * 8 + x] = v;
                    img[(c * 8 + y) * 8 + 7 - x] = v;
                }
            }
        }
        assert_eq!(symmetric_loss(&img, 8, 1e-2), 0.0);
    }

    #[test]
    fn wrong_sizes_are_rejected() {
        let net = CycleNet::<f32>::new(tiny(), 0).unwrap();
        assert!(matches!(net.encode(&[0.0; 10]), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(net.retrieve(&[0.0; 192], &[0.0; 3]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn warp_retrieval_is_a_stub() {
        let cfg = ModelConfig {
            retrieval: RetrievalMode::Warp,
            ..tiny()
        };
        assert!(matches!(CycleNet::<f32>::new(cfg, 0), Err(Error::Unsupported(_))));
    }
}
