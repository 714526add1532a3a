use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use super::TrainConfig;
use crate::error::Result;

/// Prefix of momentum buffers stored alongside network tensors in a checkpoint.
pub const MOMENTUM_PREFIX: &str = "optim.momentum.";

/// Step-wise learning rate: linear ramp from 0 over `warmup_steps`, then
/// cosine annealing from the peak to 0 at the final step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl StepSchedule {
    pub fn new(config: &TrainConfig, steps_per_epoch: usize) -> Self {
        Self {
            peak_lr: config.lr,
            warmup_steps: config.warmup_epochs * steps_per_epoch,
            total_steps: config.epochs * steps_per_epoch,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(1 + self.warmup_steps);
        if span == 0 {
            return self.peak_lr;
        }
        let t = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

pub fn lr_at(step: usize, config: &TrainConfig, steps_per_epoch: usize) -> f64 {
    StepSchedule::new(config, steps_per_epoch).lr_at(step)
}

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay:
/// `g += wd * w; b = m * b + g; w -= lr * b`, where the first step sets `b = g`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            buffers: BTreeMap::new(),
        }
    }

    /// Updates every parameter that received a gradient.
    pub fn step(&mut self, params: &BTreeMap<String, Var>, grads: &GradStore, lr: f64) -> Result<()> {
        for (name, var) in params {
            let Some(grad) = grads.get(var.as_tensor()) else {
                continue;
            };
            // Gradients can still reference the forward graph; detaching keeps
            // the momentum buffers from pinning every past step in memory.
            let weight = var.as_tensor().detach();
            let grad = (grad.detach() + (&weight * self.weight_decay)?)?;
            let buf = match self.buffers.get(name) {
                Some(b) => ((b * self.momentum)? + grad)?,
                None => grad,
            };
            var.set(&(weight - (&buf * lr)?)?)?;
            self.buffers.insert(name.clone(), buf);
        }
        Ok(())
    }

    /// Momentum buffers keyed for a checkpoint.
    pub fn state(&self) -> impl Iterator<Item = (String, Tensor)> + '_ {
        self.buffers.iter().map(|(k, v)| (format!("{MOMENTUM_PREFIX}{k}"), v.clone()))
    }

    /// Restores buffers from checkpoint tensors, converting to `dtype`.
    pub fn load_state(&mut self, tensors: &BTreeMap<String, Tensor>, dtype: candle_core::DType) -> Result<()> {
        self.buffers.clear();
        for (k, v) in tensors {
            if let Some(name) = k.strip_prefix(MOMENTUM_PREFIX) {
                self.buffers.insert(name.to_string(), v.to_dtype(dtype)?);
            }
        }
        Ok(())
    }
}
