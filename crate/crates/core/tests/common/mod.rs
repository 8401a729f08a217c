#![allow(dead_code)]

use mdet_core::autodiff::{Tape, Var};
use mdet_core::model::Model;
use mdet_core::system::MolecularSystem;
use mdet_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Worst violation of `|a - f| <= rtol * max(|a|, |f|) + atol`, expressed as
/// the ratio `|a - f| / (rtol * max + atol)`; below 1 means pass.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub worst_ratio: f64,
    pub worst_rel: f64,
    pub checked: usize,
}

/// Compare tape gradients of `build` against central differences on every
/// element of every input.
pub fn fd_check(
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
    h: f64,
    rtol: f64,
    atol: f64,
) -> FdReport {
    let eval = |vals: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let mut report = FdReport {
        worst_ratio: 0.0,
        worst_rel: 0.0,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let g = grads.wrt(v);
        for e in 0..inputs[k].len() {
            let x0 = inputs[k].data()[e];
            work[k].data_mut()[e] = x0 + h;
            let up = eval(&work);
            work[k].data_mut()[e] = x0 - h;
            let dn = eval(&work);
            work[k].data_mut()[e] = x0;
            let fd = (up - dn) / (2.0 * h);
            let a = g.data()[e];
            let scale = a.abs().max(fd.abs());
            let diff = (a - fd).abs();
            report.worst_ratio = report.worst_ratio.max(diff / (rtol * scale + atol));
            if scale > 0.0 {
                report.worst_rel = report.worst_rel.max(diff / scale);
            }
            report.checked += 1;
        }
    }
    report
}

/// Reduce any tensor to a scalar through fixed pseudo-random weights so that
/// every output element contributes a distinct coefficient.
pub fn weighted_sum(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let shape = tape.shape(x).to_vec();
    let w = Tensor::uniform(&shape, -1.0, 1.0, &mut rng(seed));
    let w = tape.constant(w);
    let p = tape.mul(x, w).unwrap();
    tape.sum(p).unwrap()
}

pub fn random_system<R: Rng>(n: usize, rng: &mut R) -> MolecularSystem {
    let species = [1u32, 6, 7, 8];
    loop {
        let pos: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ]
            })
            .collect();
        let sys = MolecularSystem::new(
            (0..n).map(|_| species[rng.random_range(0..4)]).collect(),
            pos,
        )
        .unwrap();
        if sys.pair_distances().iter().all(|&d| d > 0.7) {
            return sys;
        }
    }
}

fn w(model: &Model<f64>, path: &str) -> Tensor<f64> {
    model.params.get(path).unwrap().clone()
}

/// Direct quadruple loop over (head, i, j, l) for one attention block,
/// including the output projection. `x` is `[n, n, d]` row-major.
pub fn naive_tria_attention(model: &Model<f64>, layer: usize, x: &[f64], n: usize) -> Vec<f64> {
    let d = model.config.embed_dim;
    let heads = model.config.n_heads;
    let dh = d / heads;
    let pre = format!("layers.{layer}.attn");
    let (wq, wk, wv1, wv2) = (
        w(model, &format!("{pre}.wq")),
        w(model, &format!("{pre}.wk")),
        w(model, &format!("{pre}.wv1")),
        w(model, &format!("{pre}.wv2")),
    );
    let (wo, bo) = (
        w(model, &format!("{pre}.out.w")),
        w(model, &format!("{pre}.out.b")),
    );
    let proj = |i: usize, j: usize, m: &Tensor<f64>, col: usize| -> f64 {
        (0..d)
            .map(|c| x[(i * n + j) * d + c] * m.at(&[c, col]))
            .sum()
    };
    let mut o = vec![0.0; n * n * d];
    for h in 0..heads {
        for i in 0..n {
            for j in 0..n {
                let mut logits = vec![0.0; n];
                for (l, lg) in logits.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for dd in h * dh..(h + 1) * dh {
                        s += proj(i, l, &wq, dd) * proj(l, j, &wk, dd);
                    }
                    *lg = s / (dh as f64).sqrt();
                }
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
                for l in 0..n {
                    let a = (logits[l] - m).exp() / z;
                    for dd in h * dh..(h + 1) * dh {
                        o[(i * n + j) * d + dd] += a * proj(i, l, &wv1, dd) * proj(l, j, &wv2, dd);
                    }
                }
            }
        }
    }
    let mut out = vec![0.0; n * n * d];
    for p in 0..n * n {
        for c in 0..d {
            let mut s = bo.data()[c];
            for k in 0..d {
                s += o[p * d + k] * wo.at(&[k, c]);
            }
            out[p * d + c] = s;
        }
    }
    out
}

/// Ordinary least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
