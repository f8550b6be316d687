use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Optimisation schedule shared by both learned models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative step-decay factor.
    pub decay_gamma: f64,
    pub decay_every_epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// 80 epochs, lr 0.01, batch 32, ×0.01 every 20 epochs.
    pub fn txid_default() -> Self {
        Self {
            epochs: 80,
            batch_size: 32,
            lr: 0.01,
            decay_gamma: 0.01,
            decay_every_epochs: 20,
            seed: 0,
        }
    }

    /// 80 epochs, lr 0.001, batch 32, ×0.1 every 40 epochs.
    pub fn e2e_default() -> Self {
        Self {
            epochs: 80,
            batch_size: 32,
            lr: 0.001,
            decay_gamma: 0.1,
            decay_every_epochs: 40,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every_epochs == 0 {
            return Err(Error::config("epochs, batch size and decay period must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.decay_gamma > 0.0 && self.decay_gamma.is_finite()) {
            return Err(Error::config("learning rate and decay factor must be positive"));
        }
        Ok(())
    }
}

/// `lr0 · γ^⌊epoch / every⌋`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * cfg.decay_gamma.powi((epoch / cfg.decay_every_epochs.max(1)) as i32)
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[&Tensor<T>], lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

pub fn adam_step<T: Scalar>(params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adam: parameter, gradient and moment lists differ in length"));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::shape(format!(
                "adam: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::of(1.0 - state.beta1.powi(t));
    let c2 = T::of(1.0 - state.beta2.powi(t));
    let (lr, eps) = (T::of(state.lr), T::of(state.eps));
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            m[k] = b1 * m[k] + (T::one() - b1) * g[k];
            v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            *w -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::txid_default();
        for e in 0..20 {
            assert_eq!(lr_schedule(e, &cfg), 0.01);
        }
        assert!((lr_schedule(20, &cfg) - 1e-4).abs() < 1e-15);
        let flat = TrainConfig {
            decay_gamma: 1.0,
            ..cfg.clone()
        };
        assert_eq!(lr_schedule(79, &flat), 0.01);
        let e2e = TrainConfig::e2e_default();
        assert_eq!((e2e.lr, e2e.decay_gamma, e2e.decay_every_epochs), (0.001, 0.1, 40));
        assert_eq!((cfg.epochs, cfg.lr, cfg.batch_size, cfg.decay_gamma, cfg.decay_every_epochs), (80, 0.01, 32, 0.01, 20));
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters() {
        let mut p = Tensor::from_vec(&[3], vec![0.3f64, -1.0, 2.0]).unwrap();
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new(&[&p], 0.1);
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        }
        assert_eq!(p.data(), &[0.3, -1.0, 2.0]);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::from_vec(&[2], vec![1.0f64, 1.0]).unwrap();
        let g = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        let mut st = AdamState::new(&[&p], 0.01);
        adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        assert!((p.data()[0] - 0.99).abs() < 1e-6);
        assert!((p.data()[1] - 1.01).abs() < 1e-6);
    }

    #[test]
    fn two_steps_closed_form() {
        let mut p = Tensor::from_vec(&[1], vec![0.5f64]).unwrap();
        let g = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let mut st = AdamState::new(&[&p], 0.1);
        adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        // m1 = 0.1, v1 = 0.001; m2 = 0.19, v2 = 0.001999: both corrected to 1
        let m2: f64 = 0.9 * 0.1 + 0.1;
        let v2: f64 = 0.999 * 0.001 + 0.001;
        let step2 = 0.1 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        let step1 = 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.data()[0] - (0.5 - step1 - step2)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new(&[&p], 0.1);
        assert!(matches!(adam_step(&mut [&mut p], &[&g], &mut st), Err(Error::Shape(_))));
    }
}
