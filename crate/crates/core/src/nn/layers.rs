use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{conv_out_size, Scalar, Tensor};

/// Spatial geometry of one convolution call.
#[derive(Debug, Clone, Copy)]
struct Geom {
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Geom {
    /// Output positions `o` with `o * stride + tap - pad` inside `[0, input)`.
    #[inline]
    fn valid(&self, tap: usize, input: usize, output: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let p = self.pad as isize;
        let t = tap as isize;
        let lo = if p > t { (p - t + s - 1) / s } else { 0 };
        let hi_num = input as isize - 1 + p - t;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = ((hi_num / s) + 1).min(output as isize);
        (lo as usize, hi.max(lo) as usize)
    }
}

/// `y += conv(x, w)`; `w` is laid out `[out_c][in_c][k][k]`.
fn conv_forward<T: Scalar>(g: &Geom, x: &[T], w: &[T], y: &mut [T]) {
    let (ih, iw, oh, ow, k, s, p) = (g.in_h, g.in_w, g.out_h, g.out_w, g.k, g.stride, g.pad);
    for oc in 0..g.out_c {
        let yo = &mut y[oc * oh * ow..(oc + 1) * oh * ow];
        for ic in 0..g.in_c {
            let xi = &x[ic * ih * iw..(ic + 1) * ih * iw];
            let wbase = (oc * g.in_c + ic) * k * k;
            for ky in 0..k {
                let (oy0, oy1) = g.valid(ky, ih, oh);
                for kx in 0..k {
                    let (ox0, ox1) = g.valid(kx, iw, ow);
                    let wv = w[wbase + ky * k + kx];
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        let xrow = &xi[iy * iw..(iy + 1) * iw];
                        let yrow = &mut yo[oy * ow..(oy + 1) * ow];
                        for ox in ox0..ox1 {
                            yrow[ox] = yrow[ox] + wv * xrow[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulate `dx += conv^T(dy, w)` and/or `dw += corr(x, dy)`.
fn conv_backward<T: Scalar>(g: &Geom, x: &[T], w: &[T], dy: &[T], mut dx: Option<&mut [T]>, mut dw: Option<&mut [T]>) {
    let (ih, iw, oh, ow, k, s, p) = (g.in_h, g.in_w, g.out_h, g.out_w, g.k, g.stride, g.pad);
    for oc in 0..g.out_c {
        let dyo = &dy[oc * oh * ow..(oc + 1) * oh * ow];
        for ic in 0..g.in_c {
            let xi = if dw.is_some() { &x[ic * ih * iw..(ic + 1) * ih * iw] } else { &[][..] };
            let wbase = (oc * g.in_c + ic) * k * k;
            for ky in 0..k {
                let (oy0, oy1) = g.valid(ky, ih, oh);
                for kx in 0..k {
                    let (ox0, ox1) = g.valid(kx, iw, ow);
                    let wv = w[wbase + ky * k + kx];
                    let mut acc = T::zero();
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        let dyrow = &dyo[oy * ow..(oy + 1) * ow];
                        if let Some(dx) = dx.as_deref_mut() {
                            let dxrow = &mut dx[ic * ih * iw + iy * iw..ic * ih * iw + (iy + 1) * iw];
                            for ox in ox0..ox1 {
                                let ix = ox * s + kx - p;
                                dxrow[ix] = dxrow[ix] + wv * dyrow[ox];
                            }
                        }
                        if dw.is_some() {
                            let xrow = &xi[iy * iw..(iy + 1) * iw];
                            for ox in ox0..ox1 {
                                acc = acc + dyrow[ox] * xrow[ox * s + kx - p];
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[wbase + ky * k + kx] = dw[wbase + ky * k + kx] + acc;
                    }
                }
            }
        }
    }
}

/// Strided 2D convolution over CHW inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (in_c * k * k) as f64;
        let bound = gain * (3.0 / fan_in).sqrt();
        Self {
            weight: Tensor::uniform(format!("{name}.weight"), vec![out_c, in_c, k, k], bound, rng),
            bias: bias.then(|| Tensor::zeros(format!("{name}.bias"), vec![out_c])),
            in_c,
            out_c,
            k,
            stride,
            pad,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out_size(h, self.k, self.stride, self.pad),
            conv_out_size(w, self.k, self.stride, self.pad),
        )
    }

    fn geom(&self, h: usize, w: usize) -> Geom {
        let (oh, ow) = self.out_size(h, w);
        Geom {
            in_c: self.in_c,
            out_c: self.out_c,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
            in_h: h,
            in_w: w,
            out_h: oh,
            out_w: ow,
        }
    }

    pub fn forward(&self, x: &[T], h: usize, w: usize) -> Vec<T> {
        let g = self.geom(h, w);
        let plane = g.out_h * g.out_w;
        let mut y = vec![T::zero(); self.out_c * plane];
        if let Some(b) = &self.bias {
            for (oc, chunk) in y.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b.data[oc]);
            }
        }
        conv_forward(&g, x, &self.weight.data, &mut y);
        y
    }

    /// Accumulate parameter gradients into `grad` and return `dL/dx` when asked.
    pub fn backward(&self, x: &[T], h: usize, w: usize, dy: &[T], grad: &mut Conv2d<T>, need_dx: bool) -> Option<Vec<T>> {
        let g = self.geom(h, w);
        let plane = g.out_h * g.out_w;
        if let Some(db) = grad.bias.as_mut() {
            for (oc, chunk) in dy.chunks(plane).enumerate() {
                db.data[oc] = db.data[oc] + chunk.iter().copied().sum::<T>();
            }
        }
        let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
        conv_backward(&g, x, &self.weight.data, dy, dx.as_deref_mut(), Some(&mut grad.weight.data));
        dx
    }
}

/// Transposed convolution, the adjoint of [`Conv2d`] with the same weight
/// layout `[in_c][out_c][k][k]` (its "in" is the small side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvTranspose2d<T> {
    pub weight: Tensor<T>,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(name: &str, in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        // each output receives roughly in_c * (k/stride)^2 taps
        let fan_in = (in_c * (k / stride).max(1).pow(2)) as f64;
        let bound = gain * (3.0 / fan_in).sqrt();
        Self {
            weight: Tensor::uniform(format!("{name}.weight"), vec![in_c, out_c, k, k], bound, rng),
            in_c,
            out_c,
            k,
            stride,
            pad,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.k - 2 * self.pad,
            (w - 1) * self.stride + self.k - 2 * self.pad,
        )
    }

    /// Geometry of the equivalent forward convolution (big -> small).
    fn adjoint_geom(&self, h: usize, w: usize) -> Geom {
        let (oh, ow) = self.out_size(h, w);
        Geom {
            in_c: self.out_c,
            out_c: self.in_c,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
            in_h: oh,
            in_w: ow,
            out_h: h,
            out_w: w,
        }
    }

    pub fn forward(&self, x: &[T], h: usize, w: usize) -> Vec<T> {
        let g = self.adjoint_geom(h, w);
        let mut y = vec![T::zero(); self.out_c * g.in_h * g.in_w];
        // y = conv^T(x): the data-gradient of the adjoint convolution
        conv_backward(&g, &[], &self.weight.data, x, Some(&mut y), None);
        y
    }

    pub fn backward(&self, x: &[T], h: usize, w: usize, dy: &[T], grad: &mut ConvTranspose2d<T>, need_dx: bool) -> Option<Vec<T>> {
        let g = self.adjoint_geom(h, w);
        // weight gradient: correlate the big-side gradient with the small-side input
        conv_backward(&g, dy, &self.weight.data, x, None, Some(&mut grad.weight.data));
        need_dx.then(|| {
            let mut dx = vec![T::zero(); x.len()];
            conv_forward(&g, dy, &self.weight.data, &mut dx);
            dx
        })
    }
}

/// Fully connected layer, weight `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, bias: bool, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let bound = gain * (3.0 / in_dim as f64).sqrt();
        Self {
            weight: Tensor::uniform(format!("{name}.weight"), vec![out_dim, in_dim], bound, rng),
            bias: bias.then(|| Tensor::zeros(format!("{name}.bias"), vec![out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let w = &self.weight.data;
        (0..self.out_dim)
            .map(|o| {
                let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.bias.as_ref().map_or(T::zero(), |b| b.data[o]);
                for (a, b) in row.iter().zip(x) {
                    acc = acc + *a * *b;
                }
                acc
            })
            .collect()
    }

    pub fn backward(&self, x: &[T], dy: &[T], grad: &mut Linear<T>, need_dx: bool) -> Option<Vec<T>> {
        if let Some(db) = grad.bias.as_mut() {
            for (d, g) in db.data.iter_mut().zip(dy) {
                *d = *d + *g;
            }
        }
        let mut dx = need_dx.then(|| vec![T::zero(); self.in_dim]);
        for (o, &g) in dy.iter().enumerate() {
            let row = &self.weight.data[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight.data[o * self.in_dim..(o + 1) * self.in_dim];
            for (gw, &xi) in grow.iter_mut().zip(x) {
                *gw = *gw + g * xi;
            }
            if let Some(dx) = dx.as_mut() {
                for (d, &wv) in dx.iter_mut().zip(row) {
                    *d = *d + g * wv;
                }
            }
        }
        dx
    }
}
