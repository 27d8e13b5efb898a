//! AdamW with decoupled weight decay and the warmup + cosine learning-rate schedule.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autograd::GradientSet;
use crate::error::{invalid, Error, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// First/second moment estimates for every parameter of one store.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamWConfig) -> Self {
        let zeros = |(_, _, t): (_, _, &Tensor<T>)| Tensor::zeros(t.shape());
        OptimizerState {
            config,
            step: 0,
            m: store.iter().map(zeros).collect(),
            v: store.iter().map(zeros).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Registers moment buffers for parameters added to the store after creation.
    pub fn extend_to(&mut self, store: &ParamStore<T>) {
        for (_, _, t) in store.iter().skip(self.m.len()) {
            self.m.push(Tensor::zeros(t.shape()));
            self.v.push(Tensor::zeros(t.shape()));
        }
    }
}

/// One AdamW update of every parameter that received a gradient.
pub fn adamw_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &GradientSet<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(invalid(format!("learning rate must be >= 0, got {lr}")));
    }
    if !grads.belongs_to(store.tag()) {
        return Err(invalid("gradients were computed for a different parameter store"));
    }
    if state.m.len() != store.len() {
        return Err(invalid("optimizer state does not match the parameter store"));
    }
    for (id, g) in grads.iter() {
        let p = store.get(id);
        if p.shape() != g.shape() || state.m[id.0].shape() != p.shape() {
            return Err(Error::Shape {
                op: "adamw_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(c.beta1, t);
    let bc2 = 1.0 - libm::pow(c.beta2, t);
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
    let decay = T::of(1.0 - lr * c.weight_decay);
    let step_size = T::of(lr / bc1);
    let inv_sqrt_bc2 = T::of(1.0 / libm::sqrt(bc2));
    let eps = T::of(c.eps);
    for (id, g) in grads.iter() {
        let m = state.m[id.0].data_mut();
        let v = state.v[id.0].data_mut();
        let p = store.get_mut(id).data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + one_b1 * gi;
            v[i] = b2 * v[i] + one_b2 * gi * gi;
            p[i] *= decay;
            p[i] -= step_size * m[i] / (v[i].sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    for (id, _) in grads.iter() {
        crate::tensor::check_finite("adamw_step", store.get(id).data())?;
    }
    Ok(())
}

/// Linear warm-up to `base_lr`, then cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_epochs: usize, total_epochs: usize, steps_per_epoch: usize) -> Result<Self> {
        if warmup_epochs > total_epochs {
            return Err(invalid("warmup_epochs exceeds total_epochs"));
        }
        if !(base_lr >= 0.0) || !base_lr.is_finite() {
            return Err(invalid("base_lr must be finite and >= 0"));
        }
        Ok(LrSchedule {
            base_lr,
            warmup_epochs,
            total_epochs,
            steps_per_epoch,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch
    }
}

pub fn lr_at(schedule: &LrSchedule, step: usize) -> Result<f64> {
    let total = schedule.total_steps();
    if step > total {
        return Err(invalid(format!("step {step} beyond schedule end {total}")));
    }
    let warm = schedule.warmup_steps();
    if step < warm {
        return Ok(schedule.base_lr * step as f64 / warm as f64);
    }
    if total == warm {
        return Ok(schedule.base_lr);
    }
    let progress = (step - warm) as f64 / (total - warm) as f64;
    Ok(schedule.base_lr * 0.5 * (1.0 + libm::cos(PI * progress)))
}
