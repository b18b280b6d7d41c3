use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment estimates for a fixed list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update. With `lr == 0` parameters are left untouched.
    pub fn update<T: Scalar>(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) {
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let gj = g.data[j].f64();
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                if c.lr != 0.0 {
                    let upd = c.lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
                    p.data[j] = T::of(p.data[j].f64() - upd);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut x = Tensor::<f64> {
            name: "x".into(),
            shape: vec![2],
            data: vec![3.0, -2.0],
        };
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            &[2],
        );
        for _ in 0..2000 {
            let g = Tensor {
                name: "g".into(),
                shape: vec![2],
                data: x.data.iter().map(|v| 2.0 * v).collect(),
            };
            opt.update(&mut [&mut x], &[&g]);
        }
        assert!(x.data.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut x = Tensor::<f32> {
            name: "x".into(),
            shape: vec![1],
            data: vec![1.5],
        };
        let g = x.clone();
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            &[1],
        );
        opt.update(&mut [&mut x], &[&g]);
        assert_eq!(x.data, vec![1.5]);
    }
}
