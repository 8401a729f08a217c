use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Peak learning rate reached at the end of warmup.
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub min_lr: f64,
    /// Systems per step after augmentation.
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
    pub seed: u64,
    /// Duplicate each half-batch under random O(3) operators.
    pub augment: bool,
    /// Validation cadence in steps.
    pub eval_every: usize,
}

/// Learning rate at step 0 of the warmup ramp.
pub const WARMUP_START_LR: f64 = 1e-6;

impl TrainConfig {
    pub fn toy() -> Self {
        Self {
            learning_rate: 5e-4,
            warmup_steps: 250,
            total_steps: 5000,
            min_lr: 5e-8,
            batch_size: 16,
            weight_decay: 1e-7,
            grad_clip: 1.0,
            seed: 0,
            augment: true,
            eval_every: 250,
        }
    }

    pub fn full() -> Self {
        Self {
            warmup_steps: 5000,
            total_steps: 880_000,
            batch_size: 64,
            eval_every: 5000,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.warmup_steps >= self.total_steps {
            return bad(format!(
                "warmup_steps ({}) must be below total_steps ({})",
                self.warmup_steps, self.total_steps
            ));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("min_lr", self.min_lr),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if self.min_lr > self.learning_rate {
            return bad("min_lr exceeds learning_rate".into());
        }
        if self.batch_size == 0 || (self.augment && self.batch_size % 2 == 1) {
            return bad(format!(
                "batch_size must be positive (and even with augmentation), got {}",
                self.batch_size
            ));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        Ok(())
    }

    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.read_into("learning_rate", &mut self.learning_rate)?;
        kv.read_into("warmup_steps", &mut self.warmup_steps)?;
        kv.read_into("total_steps", &mut self.total_steps)?;
        kv.read_into("min_lr", &mut self.min_lr)?;
        kv.read_into("batch_size", &mut self.batch_size)?;
        kv.read_into("weight_decay", &mut self.weight_decay)?;
        kv.read_into("grad_clip", &mut self.grad_clip)?;
        kv.read_into("seed", &mut self.seed)?;
        kv.read_into("augment", &mut self.augment)?;
        kv.read_into("eval_every", &mut self.eval_every)?;
        Ok(())
    }
}
