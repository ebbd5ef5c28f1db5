//! AdamW with a linear warmup to a constant learning rate.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 4e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 50,
        }
    }
}

impl AdamWConfig {
    /// Learning rate used for update number `step` (1-based): ramps
    /// linearly from 0 to `lr` over `warmup_steps`, then stays at `lr`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * step as f64 / self.warmup_steps as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Result<Self> {
        if !(config.lr >= 0.0) || !(config.eps > 0.0) || !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::invalid("invalid AdamW hyperparameters"));
        }
        Ok(Self {
            config,
            step: 0,
            m: params.iter().map(|p| alloc::vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| alloc::vec![0.0; p.numel()]).collect(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one decoupled-weight-decay Adam update. Parameters are
    /// rounded to `f32` afterwards so that checkpoints store them exactly.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::invalid("parameter and gradient counts differ"));
        }
        self.step += 1;
        let c = self.config;
        let lr = c.lr_at(self.step);
        if lr == 0.0 {
            return Ok(());
        }
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adamw",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let update = (*mi / bc1) / (libm::sqrt(*vi / bc2) + c.eps);
                let next = *w - lr * (update + c.weight_decay * *w);
                *w = next as f32 as f64;
            }
            if !p.is_finite() {
                return Err(Error::NonFinite { op: "adamw" });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn warmup_is_linear_then_constant() {
        let c = AdamWConfig::default();
        assert_eq!(c.lr_at(25), 0.5 * c.lr);
        assert_eq!(c.lr_at(50), c.lr);
        assert_eq!(c.lr_at(5000), c.lr);
        let none = AdamWConfig {
            warmup_steps: 0,
            ..c
        };
        assert_eq!(none.lr_at(1), c.lr);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut p = vec![Tensor::vector(vec![0.25, -1.5]).unwrap()];
        let before = p.clone();
        let g = vec![Tensor::vector(vec![1.0, 1.0]).unwrap()];
        let mut opt = AdamW::new(AdamWConfig { lr: 0.0, ..Default::default() }, &p).unwrap();
        for _ in 0..10 {
            opt.step(&mut p, &g).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // after bias correction the first Adam direction is g/(|g|+eps)
        let c = AdamWConfig {
            lr: 0.1,
            warmup_steps: 0,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut p = vec![Tensor::vector(vec![1.0, -2.0]).unwrap()];
        let g = vec![Tensor::vector(vec![3.0, -0.5]).unwrap()];
        let mut opt = AdamW::new(c, &p).unwrap();
        opt.step(&mut p, &g).unwrap();
        let want = [1.0 - 0.1 * (1.0 + 0.5 * 1.0), -2.0 - 0.1 * (-1.0 + 0.5 * -2.0)];
        for (got, want) in p[0].data().iter().zip(want) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let c = AdamWConfig {
            lr: 0.05,
            warmup_steps: 5,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = vec![Tensor::vector(vec![2.0, -3.0]).unwrap()];
        let mut opt = AdamW::new(c, &p).unwrap();
        for _ in 0..500 {
            let g = vec![p[0].scale(2.0).unwrap()];
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p[0].norm() < 0.05);
    }
}
