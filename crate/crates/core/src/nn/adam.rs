use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Cosine-annealed learning rate; steps past `total_steps` stay at `lr_min`.
pub fn cosine_lr(step: u64, base_lr: f64, total_steps: u64, lr_min: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return lr_min;
    }
    let frac = step as f64 / total_steps as f64;
    lr_min + 0.5 * (base_lr - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub total_steps: u64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(base_lr: f64, total_steps: u64, lr_min: f64) -> Self {
        Self { base_lr, total_steps, lr_min, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        cosine_lr(step, self.base_lr, self.total_steps, self.lr_min)
    }
}

/// Adam moments (shaped like the parameters) and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub cfg: AdamConfig,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(cfg: AdamConfig, params: &[Tensor<S>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { cfg, m: zeros(), v: zeros(), step: 0 }
    }

    /// Learning rate the next update will use.
    pub fn current_lr(&self) -> f64 {
        self.cfg.lr_at(self.step)
    }
}

/// One bias-corrected Adam update with the learning rate of the current
/// step; increments the step counter.
pub fn adam_step<S: Scalar>(params: &mut [Tensor<S>], grads: &[Tensor<S>], state: &mut AdamState<S>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid("parameter, gradient and moment lists differ in length"));
    }
    let c = state.cfg;
    let lr = c.lr_at(state.step);
    let t = (state.step + 1) as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
    let (ob1, ob2) = (S::lit(1.0 - c.beta1), S::lit(1.0 - c.beta2));
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::invalid("gradient shape does not match its parameter"));
        }
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mv = b1 * *mv + ob1 * gv;
            *vv = b2 * *vv + ob2 * gv * gv;
            let mhat = mv.f64() / bc1;
            let vhat = vv.f64() / bc2;
            *pv -= S::lit(lr * mhat / (vhat.sqrt() + c.eps));
        }
    }
    state.step += 1;
    Ok(())
}
