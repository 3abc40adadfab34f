//! AdamW with decoupled weight decay, plus the warm-up cosine schedule.

use std::f64::consts::PI;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numerics::params::ParamSet;
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state: first/second moment buffers per parameter plus the step
/// counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamWState {
    cfg: AdamWConfig,
    step_count: u64,
    moments: IndexMap<String, (Tensor, Tensor)>,
}

impl AdamWState {
    pub fn new(params: &ParamSet, cfg: AdamWConfig) -> Self {
        let moments = params
            .iter()
            .map(|(name, t)| {
                let z = Tensor::zeros(t.shape().to_vec());
                (name.to_string(), (z.clone(), z))
            })
            .collect();
        Self {
            cfg,
            step_count: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One AdamW step at learning rate `lr`. Decoupled decay is applied to
    /// the parameter before the moment update: theta *= 1 - lr*lambda.
    /// Parameters without a gradient entry are decayed but not moved.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &IndexMap<String, Tensor>,
        lr: f64,
    ) -> Result<()> {
        if lr < 0.0 {
            return Err(Error::Config(format!("negative learning rate {lr}")));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, theta) in params.iter_mut() {
            let decay = 1.0 - lr * c.weight_decay;
            for v in theta.data_mut() {
                *v *= decay;
            }
            let Some(grad) = grads.get(name) else { continue };
            if grad.shape() != theta.shape() {
                return Err(Error::Shape(format!(
                    "grad shape {:?} vs param {:?} for {}",
                    grad.shape(),
                    theta.shape(),
                    name
                )));
            }
            let (m, v) = self
                .moments
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("no optimizer state for {name}")))?;
            let md = m.data_mut();
            let vd = v.data_mut();
            let gd = grad.data();
            let td = theta.data_mut();
            for i in 0..gd.len() {
                md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gd[i];
                vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gd[i] * gd[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                td[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Linear warm-up to `base_lr` over `warmup_steps`, then cosine decay to 0
/// at `total_steps`.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        if base_lr <= 0.0 {
            return Err(Error::Config(format!("base_lr must be positive, got {base_lr}")));
        }
        if total_steps <= warmup_steps {
            return Err(Error::Config(format!(
                "total_steps {total_steps} must exceed warmup_steps {warmup_steps}"
            )));
        }
        Ok(Self {
            base_lr,
            warmup_steps,
            total_steps,
        })
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Contract(format!(
                "step {} beyond total_steps {}",
                step, self.total_steps
            )));
        }
        if step < self.warmup_steps {
            return Ok(self.base_lr * step as f64 / self.warmup_steps as f64);
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let progress = (step - self.warmup_steps) as f64 / span;
        Ok(self.base_lr * 0.5 * (1.0 + (PI * progress).cos()))
    }
}
