//! Mini-batch training loop.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::augment;
use super::config::TrainConfig;
use super::optim::{cosine_warmup_lr, AdamW};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Real;
use crate::system::MolecularSystem;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Present on evaluation steps.
    pub val_mae: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub metrics: Vec<MetricRow>,
    pub initial_val_mae: f64,
    pub final_val_mae: f64,
}

impl TrainReport {
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("step,lr,loss,val_mae\n");
        for r in &self.metrics {
            let _ = write!(s, "{},{:.6e},{:.9e},", r.step, r.lr, r.loss);
            if let Some(v) = r.val_mae {
                let _ = write!(s, "{v:.9e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn losses(&self) -> Vec<f64> {
        self.metrics.iter().map(|r| r.loss).collect()
    }
}

/// Mean absolute error over every force component, eV/Å.
pub fn force_mae<T: Real>(model: &Model<T>, systems: &[MolecularSystem]) -> Result<f64> {
    let per: Vec<(f64, usize)> = systems
        .par_iter()
        .map(|s| {
            let target = s
                .forces
                .as_ref()
                .ok_or_else(|| Error::Invalid("validation system has no forces".into()))?;
            let pred = model.predict_forces(s)?;
            let err: f64 = pred
                .iter()
                .zip(target)
                .map(|(p, t)| (0..3).map(|c| (p[c] - t[c]).abs()).sum::<f64>())
                .sum();
            Ok((err, 3 * s.n_atoms()))
        })
        .collect::<Result<_>>()?;
    let (e, n) = per.iter().fold((0.0, 0), |(a, b), (x, y)| (a + x, b + y));
    if n == 0 {
        return Err(Error::Invalid("no systems to evaluate".into()));
    }
    Ok(e / n as f64)
}

/// Mean loss and mean gradients over a batch. Systems are evaluated in
/// parallel and reduced in batch order, so results do not depend on the
/// thread count.
pub fn batch_loss_and_grads<T: Real>(
    model: &Model<T>,
    batch: &[MolecularSystem],
) -> Result<(f64, Vec<Tensor<T>>)> {
    let parts: Vec<(f64, Vec<Tensor<T>>)> = batch
        .par_iter()
        .map(|s| model.loss_and_grads(s))
        .collect::<Result<_>>()?;
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut acc: Vec<Vec<f64>> = model
        .params
        .iter()
        .map(|(_, p)| vec![0.0; p.len()])
        .collect();
    for (l, g) in &parts {
        loss += l * inv;
        for (a, t) in acc.iter_mut().zip(g) {
            for (x, y) in a.iter_mut().zip(t.data()) {
                *x += inv * y.to_f64_lossy();
            }
        }
    }
    let grads = acc
        .into_iter()
        .zip(model.params.iter())
        .map(|(a, (_, p))| Tensor::new(p.shape().to_vec(), a.into_iter().map(T::lit).collect()))
        .collect::<Result<_>>()?;
    Ok((loss, grads))
}

/// Train `model` in place. `on_row` sees every metric row as it is produced.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_row: impl FnMut(&MetricRow),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Invalid("validation set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::from_config(cfg);
    let sources = if cfg.augment {
        cfg.batch_size / 2
    } else {
        cfg.batch_size
    };
    let initial = force_mae(model, &val_set.systems)?;
    let mut metrics = Vec::with_capacity(cfg.total_steps);
    let mut last = initial;
    for step in 0..cfg.total_steps {
        let lr = cosine_warmup_lr(step, cfg)?;
        let picked: Vec<MolecularSystem> = if sources <= train_set.len() {
            sample(&mut rng, train_set.len(), sources)
                .into_iter()
                .map(|i| train_set.systems[i].clone())
                .collect()
        } else {
            (0..sources)
                .map(|k| train_set.systems[k % train_set.len()].clone())
                .collect()
        };
        let batch: Vec<MolecularSystem> = if cfg.augment {
            augment(&picked, &mut rng)
                .into_iter()
                .map(|(s, _)| s)
                .collect()
        } else {
            picked
        };
        let (loss, grads) = match batch_loss_and_grads(model, &batch) {
            Err(Error::NonFinite { .. } | Error::NonFiniteAttention { .. }) => {
                return Err(Error::Diverged { step })
            }
            other => other?,
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        match opt.step(&mut model.params, &grads, lr) {
            Err(Error::NonFiniteGradient { .. }) => return Err(Error::Diverged { step }),
            other => other?,
        };
        let val_mae = if (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.total_steps {
            last = force_mae(model, &val_set.systems)?;
            if !last.is_finite() {
                return Err(Error::Diverged { step });
            }
            Some(last)
        } else {
            None
        };
        let row = MetricRow {
            step,
            lr,
            loss,
            val_mae,
        };
        on_row(&row);
        metrics.push(row);
    }
    Ok(TrainReport {
        metrics,
        initial_val_mae: initial,
        final_val_mae: last,
    })
}
