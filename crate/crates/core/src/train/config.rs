use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::AdamConfig;

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    /// Sequences per step.
    pub batch_size: usize,
    pub steps: u64,
    /// Linear learning-rate warmup length.
    pub warmup_steps: u64,
    /// Seed for the batch order.
    pub seed: u64,
    /// Held-out loss cadence in steps; 0 disables it.
    pub eval_every: u64,
    /// Rows per gradient work unit. Work units are summed in a fixed order,
    /// so results do not depend on the number of threads.
    pub chunk_rows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: 1.0,
            batch_size: 32,
            steps: 3000,
            warmup_steps: 0,
            seed: 0,
            eval_every: 100,
            chunk_rows: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.chunk_rows == 0 {
            return bad("chunk_rows must be positive");
        }
        if self.grad_clip < 0.0 {
            return bad("grad_clip must be non-negative");
        }
        Ok(())
    }

    /// Learning rate in effect at 1-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            self.lr * step as f64 / self.warmup_steps as f64
        } else {
            self.lr
        }
    }

    pub fn adam(&self, step: u64) -> AdamConfig {
        AdamConfig {
            lr: self.lr_at(step),
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}
