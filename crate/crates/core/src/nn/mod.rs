//! Minimal CPU neural-network layers with hand-written backward passes.
//!
//! Everything is generic over [`Scalar`] so the same code trains in `f32`
//! and is gradient-checked in `f64`.

mod adam;
mod layers;

pub use adam::{Adam, AdamConfig};
pub use layers::{Conv2d, ConvTranspose2d, Linear};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub trait Scalar:
    num_traits::Float + std::iter::Sum + Default + Copy + Send + Sync + std::fmt::Debug + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![T::zero(); n],
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(name: impl Into<String>, shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut t = Self::zeros(name, shape);
        for v in t.data.iter_mut() {
            *v = T::of(rng.random_range(-bound..=bound));
        }
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            name: self.name.clone(),
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Exponential linear unit, applied in place.
#[inline]
pub fn elu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v <= T::zero() {
            *v = v.exp() - T::one();
        }
    }
}

/// Multiply `grad` by the ELU derivative, given the activation's output.
#[inline]
pub fn elu_backward<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= T::zero() {
            *g = *g * (y + T::one());
        }
    }
}

/// Output spatial size of a strided convolution.
pub fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}
