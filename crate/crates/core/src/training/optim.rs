//! Learning-rate schedule and AdamW.

use super::config::{TrainConfig, WARMUP_START_LR};
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Linear ramp from `1e-6` to the peak over warmup, then cosine decay to
/// `min_lr` at `total_steps`.
pub fn cosine_warmup_lr(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::Invalid(format!(
            "step {step} outside schedule of {} steps",
            cfg.total_steps
        )));
    }
    let peak = cfg.learning_rate;
    if step < cfg.warmup_steps {
        let frac = step as f64 / cfg.warmup_steps as f64;
        return Ok(WARMUP_START_LR + (peak - WARMUP_START_LR) * frac);
    }
    let frac = (step - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64;
    Ok(cfg.min_lr + 0.5 * (peak - cfg.min_lr) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Factor applied to the gradients (1 when no clipping happened).
    pub clip_scale: f64,
}

/// AdamW with global-norm clipping ahead of the moment update. Moments are
/// kept in f64 whatever the parameter precision.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(weight_decay: f64, grad_clip: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            grad_clip,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.weight_decay, cfg.grad_clip)
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update with gradients in store order. A non-finite gradient leaves
    /// the parameters untouched and names the offending path.
    pub fn step<T: Real>(
        &mut self,
        params: &mut ParameterStore<T>,
        grads: &[Tensor<T>],
        lr: f64,
    ) -> Result<StepInfo> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        let mut sq = 0.0;
        for ((path, p), g) in params.iter().zip(grads) {
            if g.shape() != p.shape() {
                return Err(Error::Shape {
                    op: "optimizer_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient {
                    path: path.to_string(),
                });
            }
            sq += g
                .data()
                .iter()
                .map(|x| x.to_f64_lossy().powi(2))
                .sum::<f64>();
        }
        let norm = sq.sqrt();
        let scale = if norm > self.grad_clip {
            self.grad_clip / norm
        } else {
            1.0
        };
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (e, (x, gx)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gi = scale * gx.to_f64_lossy();
                m[e] = self.beta1 * m[e] + (1.0 - self.beta1) * gi;
                v[e] = self.beta2 * v[e] + (1.0 - self.beta2) * gi * gi;
                let mh = m[e] / bc1;
                let vh = v[e] / bc2;
                let xv = x.to_f64_lossy();
                let upd = lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * xv);
                if upd != 0.0 {
                    *x = T::lit(xv - upd);
                }
            }
        }
        Ok(StepInfo {
            grad_norm: norm,
            clip_scale: scale,
        })
    }
}
