//! The edge-transformer force field.
//!
//! Tokens are ordered atom pairs: `x[i, j]` is the state of edge `(i, j)` and
//! the diagonal carries the atoms. Forces come straight out of a pooled head,
//! so nothing here is rotation equivariant by construction.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::params::{Bound, ParameterStore};
use crate::scalar::Real;
use crate::system::MolecularSystem;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_multiplier: usize,
    pub n_rbf: usize,
    /// Fourier kernel count; half go to azimuth, half to polar angle.
    pub n_fourier: usize,
    pub atom_vocab: usize,
    pub spin_vocab: usize,
    pub charge_vocab: usize,
    /// Learned scale and shift after each layer norm.
    pub layer_norm_affine: bool,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    pub fn toy() -> Self {
        Self {
            embed_dim: 32,
            n_layers: 3,
            n_heads: 4,
            ffn_multiplier: 4,
            n_rbf: 32,
            n_fourier: 16,
            atom_vocab: 36,
            spin_vocab: 8,
            charge_vocab: 9,
            layer_norm_affine: true,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn full() -> Self {
        Self {
            embed_dim: 192,
            n_layers: 12,
            n_heads: 12,
            ffn_multiplier: 4,
            n_rbf: 128,
            n_fourier: 128,
            ..Self::toy()
        }
    }

    pub fn tiny() -> Self {
        Self {
            embed_dim: 8,
            n_layers: 2,
            n_heads: 2,
            ffn_multiplier: 2,
            n_rbf: 4,
            n_fourier: 4,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return bad(format!(
                "embed_dim {} must be a positive multiple of n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        if self.n_rbf == 0 {
            return bad("n_rbf must be at least 1".into());
        }
        if self.n_fourier < 2 || self.n_fourier % 2 != 0 {
            return bad(format!(
                "n_fourier {} must be even and at least 2",
                self.n_fourier
            ));
        }
        if self.ffn_multiplier == 0
            || self.atom_vocab == 0
            || self.spin_vocab == 0
            || self.charge_vocab == 0
        {
            return bad("ffn_multiplier and vocabulary sizes must be positive".into());
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Override fields from `kv`; consumed keys are marked used.
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.read_into("embed_dim", &mut self.embed_dim)?;
        kv.read_into("n_layers", &mut self.n_layers)?;
        kv.read_into("n_heads", &mut self.n_heads)?;
        kv.read_into("ffn_multiplier", &mut self.ffn_multiplier)?;
        kv.read_into("n_rbf", &mut self.n_rbf)?;
        kv.read_into("n_fourier", &mut self.n_fourier)?;
        kv.read_into("atom_vocab", &mut self.atom_vocab)?;
        kv.read_into("spin_vocab", &mut self.spin_vocab)?;
        kv.read_into("charge_vocab", &mut self.charge_vocab)?;
        kv.read_into("layer_norm_affine", &mut self.layer_norm_affine)?;
        kv.read_into("layer_norm_eps", &mut self.layer_norm_eps)?;
        Ok(())
    }

    pub fn to_kv_text(&self) -> String {
        format!(
            "embed_dim = {}\nn_layers = {}\nn_heads = {}\nffn_multiplier = {}\nn_rbf = {}\n\
             n_fourier = {}\natom_vocab = {}\nspin_vocab = {}\ncharge_vocab = {}\n\
             layer_norm_affine = {}\nlayer_norm_eps = {:e}\n",
            self.embed_dim,
            self.n_layers,
            self.n_heads,
            self.ffn_multiplier,
            self.n_rbf,
            self.n_fourier,
            self.atom_vocab,
            self.spin_vocab,
            self.charge_vocab,
            self.layer_norm_affine,
            self.layer_norm_eps
        )
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut cfg = Self::toy();
        cfg.apply(&mut kv)?;
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Azimuthal and polar Fourier frequencies.
    pub fn fourier_frequencies(&self) -> (Vec<f64>, Vec<f64>) {
        let h = self.n_fourier / 2;
        let pi = std::f64::consts::PI;
        let expo = |k: usize| {
            if h > 1 {
                k as f64 / (h - 1) as f64
            } else {
                0.0
            }
        };
        let phi = (0..h)
            .map(|k| pi * (1.0 / (2.0 * pi)).powf(expo(k)))
            .collect();
        let theta = (0..h).map(|k| pi * (1.0 / pi).powf(expo(k))).collect();
        (phi, theta)
    }

    pub fn charge_index(&self, q: i32) -> Option<usize> {
        let idx = q as i64 + (self.charge_vocab / 2) as i64;
        (0..self.charge_vocab as i64)
            .contains(&idx)
            .then_some(idx as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParameterStore<T>,
}

/// Handles into one recorded forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Recorded {
    pub positions: Var,
    pub edges: Var,
    pub forces: Var,
}

fn linear_init<T: Real, R: Rng + ?Sized>(
    store: &mut ParameterStore<T>,
    path: &str,
    din: usize,
    dout: usize,
    rng: &mut R,
) {
    let bound = 1.0 / (din as f64).sqrt();
    store.insert(
        format!("{path}.w"),
        Tensor::uniform(&[din, dout], -bound, bound, rng),
    );
    store.insert(
        format!("{path}.b"),
        Tensor::uniform(&[dout], -bound, bound, rng),
    );
}

fn mlp_init<T: Real, R: Rng + ?Sized>(
    store: &mut ParameterStore<T>,
    path: &str,
    din: usize,
    hidden: usize,
    dout: usize,
    rng: &mut R,
) {
    linear_init(store, &format!("{path}.l1"), din, hidden, rng);
    linear_init(store, &format!("{path}.l2"), hidden, dout, rng);
}

/// Smallest RBF width drawn at initialisation.
pub const RBF_SIGMA_FLOOR: f64 = 0.1;

impl<T: Real> Model<T> {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut p = ParameterStore::new();
        let emb_std = 1.0 / (d as f64).sqrt();
        p.insert(
            "embed.atom",
            Tensor::randn(&[config.atom_vocab, d], emb_std, rng),
        );
        p.insert(
            "embed.spin",
            Tensor::randn(&[config.spin_vocab, d], emb_std, rng),
        );
        p.insert(
            "embed.charge",
            Tensor::randn(&[config.charge_vocab, d], emb_std, rng),
        );
        mlp_init(&mut p, "embed.edge", 2 * d, d, d, rng);
        p.insert(
            "embed.rbf.mu",
            Tensor::uniform(&[config.n_rbf], 0.0, 7.0, rng),
        );
        let sigma: Tensor<T> = Tensor::uniform(&[config.n_rbf], 0.0, 3.0, rng);
        p.insert(
            "embed.rbf.sigma",
            sigma.map(|s| s.max(T::lit(RBF_SIGMA_FLOOR))),
        );
        p.insert("embed.rbf.scale", Tensor::filled(&[1], T::one()));
        p.insert("embed.rbf.shift", Tensor::zeros(&[1]));
        mlp_init(&mut p, "embed.dist", config.n_rbf, d, d, rng);
        linear_init(&mut p, "embed.dir", 2 * config.n_fourier, d, rng);
        for l in 0..config.n_layers {
            let pre = format!("layers.{l}");
            if config.layer_norm_affine {
                for ln in ["ln1", "ln2"] {
                    p.insert(format!("{pre}.{ln}.gamma"), Tensor::filled(&[d], T::one()));
                    p.insert(format!("{pre}.{ln}.beta"), Tensor::zeros(&[d]));
                }
            }
            let bound = 1.0 / (d as f64).sqrt();
            for w in ["wq", "wk", "wv1", "wv2"] {
                p.insert(
                    format!("{pre}.attn.{w}"),
                    Tensor::uniform(&[d, d], -bound, bound, rng),
                );
            }
            linear_init(&mut p, &format!("{pre}.attn.out"), d, d, rng);
            mlp_init(
                &mut p,
                &format!("{pre}.ffn"),
                d,
                d * config.ffn_multiplier,
                d,
                rng,
            );
        }
        mlp_init(&mut p, "head.psi1", d, d, d, rng);
        mlp_init(&mut p, "head.psi2", d, d, d, rng);
        mlp_init(&mut p, "head.psi3", d, d, 3, rng);
        Ok(Self { config, params: p })
    }

    pub fn from_parts(config: ModelConfig, params: ParameterStore<T>) -> Result<Self> {
        config.validate()?;
        let reference = Model::<T>::init(
            config.clone(),
            &mut rand_chacha::ChaCha8Rng::seed_from_u64(0),
        )
        .map(|m| m.params)?;
        for (path, t) in reference.iter() {
            match params.get(path) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{path}` has shape {:?}, config expects {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter `{path}`"))),
            }
        }
        if params.len() != reference.len() {
            return Err(Error::Checkpoint("checkpoint has extra parameters".into()));
        }
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn check_vocab(&self, sys: &MolecularSystem) -> Result<(Vec<usize>, usize, usize)> {
        let c = &self.config;
        let mut atoms = Vec::with_capacity(sys.n_atoms());
        for &z in &sys.atomic_numbers {
            if z == 0 || z as usize > c.atom_vocab {
                return Err(Error::Vocabulary {
                    kind: "atomic number",
                    value: z as i64,
                    size: c.atom_vocab,
                });
            }
            atoms.push(z as usize - 1);
        }
        if sys.spin as usize >= c.spin_vocab {
            return Err(Error::Vocabulary {
                kind: "spin",
                value: sys.spin as i64,
                size: c.spin_vocab,
            });
        }
        let q = c.charge_index(sys.charge).ok_or(Error::Vocabulary {
            kind: "charge",
            value: sys.charge as i64,
            size: c.charge_vocab,
        })?;
        Ok((atoms, sys.spin as usize, q))
    }

    /// Record the full forward pass. With `pad_to = Some(m)` the system is
    /// padded with dummy atoms to `m` and those are masked throughout.
    pub fn record(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound<'_, T>,
        sys: &MolecularSystem,
        pad_to: Option<usize>,
        positions_grad: bool,
    ) -> Result<Recorded> {
        sys.validate()?;
        let n_valid = sys.n_atoms();
        let n = pad_to.unwrap_or(n_valid).max(n_valid);
        let (mut atoms, s, q) = self.check_vocab(sys)?;
        atoms.resize(n, 0);
        let mut pos: Vec<f64> = sys.flat_positions();
        for k in n_valid..n {
            pos.extend([1.0e3 + k as f64, 0.0, 0.0]);
        }
        let pos_t = Tensor::from_f64(&[n, 3], &pos)?;
        let positions = if positions_grad {
            tape.param(pos_t)
        } else {
            tape.constant(pos_t)
        };
        let masked = n > n_valid;
        let mut x = self.embed(tape, bound, &atoms, s, q, positions)?;
        if masked {
            x = tape.mask_edges(x, n_valid)?;
        }
        for layer in 0..self.config.n_layers {
            x = self.et_layer(tape, bound, layer, x, n_valid)?;
        }
        let forces = self.force_head(tape, bound, x, masked.then_some(n_valid))?;
        if !tape.value(forces).all_finite() {
            return Err(Error::non_finite("predicted forces"));
        }
        Ok(Recorded {
            positions,
            edges: x,
            forces,
        })
    }

    /// Edge embedding `E = A + R + Γ`, shape `[N, N, D]`.
    pub fn embed(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound<'_, T>,
        atoms: &[usize],
        spin: usize,
        charge: usize,
        positions: Var,
    ) -> Result<Var> {
        let d = self.config.embed_dim;
        let atom_rows = tape.gather(bound.var("embed.atom"), atoms.to_vec())?;
        let s = tape.gather(bound.var("embed.spin"), vec![spin])?;
        let c = tape.gather(bound.var("embed.charge"), vec![charge])?;
        let e = tape.add(s, c)?;
        let e = tape.reshape(e, &[d])?;
        let a = tape.add_row(atom_rows, e)?;
        let pair = tape.pair_concat(a)?;
        let a_ij = mlp(tape, bound, "embed.edge", pair)?;

        let geom = tape.pair_geometry(positions)?;
        let rbf = tape.rbf(
            geom,
            bound.var("embed.rbf.mu"),
            bound.var("embed.rbf.sigma"),
            bound.var("embed.rbf.scale"),
            bound.var("embed.rbf.shift"),
        )?;
        let r_ij = mlp(tape, bound, "embed.dist", rbf)?;

        let (wp, wt) = self.config.fourier_frequencies();
        let four = tape.fourier(
            geom,
            wp.into_iter().map(T::lit).collect(),
            wt.into_iter().map(T::lit).collect(),
        )?;
        let g_ij = linear(tape, bound, "embed.dir", four)?;
        let sum = tape.add(a_ij, r_ij)?;
        tape.add(sum, g_ij)
    }

    fn layer_norm(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound<'_, T>,
        path: &str,
        x: Var,
    ) -> Result<Var> {
        let h = tape.layer_norm(x, T::lit(self.config.layer_norm_eps))?;
        if !self.config.layer_norm_affine {
            return Ok(h);
        }
        let h = tape.mul_row(h, bound.var(&format!("{path}.gamma")))?;
        tape.add_row(h, bound.var(&format!("{path}.beta")))
    }

    /// Multi-head triangular attention followed by the output projection.
    pub fn tria_attention(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound<'_, T>,
        layer: usize,
        x: Var,
        n_valid: usize,
    ) -> Result<Var> {
        let pre = format!("layers.{layer}.attn");
        let h = self.config.n_heads;
        let q = tape.linear(x, bound.var(&format!("{pre}.wq")), None)?;
        let k = tape.linear(x, bound.var(&format!("{pre}.wk")), None)?;
        let v1 = tape.linear(x, bound.var(&format!("{pre}.wv1")), None)?;
        let v2 = tape.linear(x, bound.var(&format!("{pre}.wv2")), None)?;
        let logits = tape.tria_logits(q, k, h, n_valid)?;
        if tape
            .value(logits)
            .data()
            .iter()
            .any(|v| v.is_nan() || *v == T::infinity())
        {
            return Err(Error::NonFiniteAttention { layer });
        }
        let attn = tape.softmax_lastaxis(logits)?;
        let o = tape.tria_mix(attn, v1, v2, h)?;
        linear(tape, bound, &format!("{pre}.out"), o)
    }

    /// Pre-norm layer: `y = x + TRIA(LN(x))`, `x' = y + FFN(LN(y))`.
    pub fn et_layer(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound<'_, T>,
        layer: usize,
        x: Var,
        n_valid: usize,
    ) -> Result<Var> {
        let pre = format!("layers.{layer}");
        let h = self.layer_norm(tape, bound, &format!("{pre}.ln1"), x)?;
        let a = self.tria_attention(tape, bound, layer, h, n_valid)?;
        let y = tape.add(x, a)?;
        let h2 = self.layer_norm(tape, bound, &format!("{pre}.ln2"), y)?;
        let f = mlp(tape, bound, &format!("{pre}.ffn"), h2)?;
        let out = tape.add(y, f)?;
        if n_valid < tape.shape(x)[0] {
            tape.mask_edges(out, n_valid)
        } else {
            Ok(out)
        }
    }

    /// `f_i = ψ3(Σ_l ψ1(x_il) + ψ2(x_li))`. The printed head sums over an
    /// index that is left free; row and column aggregation over atom `i` is
    /// the reading used here.
    pub fn force_head(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound<'_, T>,
        x: Var,
        n_valid: Option<usize>,
    ) -> Result<Var> {
        let mut h1 = mlp(tape, bound, "head.psi1", x)?;
        let mut h2 = mlp(tape, bound, "head.psi2", x)?;
        if let Some(nv) = n_valid {
            h1 = tape.mask_edges(h1, nv)?;
            h2 = tape.mask_edges(h2, nv)?;
        }
        let rows = tape.sum_axis(h1, 1)?;
        let cols = tape.sum_axis(h2, 0)?;
        let s = tape.add(rows, cols)?;
        mlp(tape, bound, "head.psi3", s)
    }

    /// Sidecar holding the architecture next to a checkpoint file.
    pub fn config_path(checkpoint: &std::path::Path) -> std::path::PathBuf {
        let mut p = checkpoint.as_os_str().to_owned();
        p.push(".config");
        p.into()
    }

    /// Write parameters to `path` and the architecture to `path.config`.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.params.save(path)?;
        std::fs::write(Self::config_path(path), self.config.to_kv_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let cfg = ModelConfig::from_kv_text(&std::fs::read_to_string(Self::config_path(path))?)?;
        Self::from_parts(cfg, ParameterStore::load(path)?)
    }

    /// Direct force prediction, eV/Å.
    pub fn predict_forces(&self, sys: &MolecularSystem) -> Result<Vec<[f64; 3]>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let rec = self.record(&mut tape, &bound, sys, None, false)?;
        Ok(rows3(tape.value(rec.forces)))
    }

    /// Loss and parameter gradients (store order) for one labelled system.
    pub fn loss_and_grads(&self, sys: &MolecularSystem) -> Result<(f64, Vec<Tensor<T>>)> {
        let target = sys
            .forces
            .as_ref()
            .ok_or_else(|| Error::Invalid("system has no reference forces".into()))?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let rec = self.record(&mut tape, &bound, sys, None, false)?;
        let tgt = Tensor::from_f64(&[sys.n_atoms(), 3], &target.concat())?;
        let loss = tape.force_loss(rec.forces, tgt)?;
        let value = tape.value(loss).item().to_f64_lossy();
        let mut grads = tape.backward(loss)?;
        Ok((value, self.params.collect_grads(&mut grads, &bound)))
    }

    /// `J[a, b] = ∂f_a/∂x_b` from `3N` reverse sweeps; row-major `3N × 3N`.
    pub fn position_jacobian(&self, sys: &MolecularSystem) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let rec = self.record(&mut tape, &bound, sys, None, true)?;
        let n3 = sys.n_atoms() * 3;
        let mut jac = vec![0.0; n3 * n3];
        for a in 0..n3 {
            let mut seed = Tensor::zeros(&[sys.n_atoms(), 3]);
            seed.data_mut()[a] = T::one();
            let g = tape
                .backward_with_seed(rec.forces, seed)?
                .wrt(rec.positions);
            for (b, v) in g.data().iter().enumerate() {
                jac[a * n3 + b] = v.to_f64_lossy();
            }
        }
        Ok(jac)
    }
}

fn linear<T: Real>(tape: &mut Tape<T>, bound: &Bound<'_, T>, path: &str, x: Var) -> Result<Var> {
    tape.linear(
        x,
        bound.var(&format!("{path}.w")),
        Some(bound.var(&format!("{path}.b"))),
    )
}

fn mlp<T: Real>(tape: &mut Tape<T>, bound: &Bound<'_, T>, path: &str, x: Var) -> Result<Var> {
    let h = linear(tape, bound, &format!("{path}.l1"), x)?;
    let h = tape.gelu(h)?;
    linear(tape, bound, &format!("{path}.l2"), h)
}

pub fn rows3<T: Real>(t: &Tensor<T>) -> Vec<[f64; 3]> {
    t.data()
        .chunks(3)
        .map(|c| {
            [
                c[0].to_f64_lossy(),
                c[1].to_f64_lossy(),
                c[2].to_f64_lossy(),
            ]
        })
        .collect()
}

/// `(1/N) Σ_i ‖pred_i − target_i‖₂` on plain arrays.
pub fn force_loss(pred: &[[f64; 3]], target: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape {
            op: "force_loss",
            lhs: vec![pred.len(), 3],
            rhs: vec![target.len(), 3],
        });
    }
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) + (p[2] - t[2]).powi(2)).sqrt()
        })
        .sum();
    Ok(s / pred.len() as f64)
}
