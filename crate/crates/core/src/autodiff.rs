//! Reverse-mode differentiation tape.
//!
//! Every primitive is an [`Op`] variant. Recording evaluates the op's forward
//! rule immediately and appends the result; `backward` walks the node list in
//! reverse index order, which is a reverse topological order because inputs
//! always precede their consumers.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{dot, gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Gelu(Var),
    Softmax(Var),
    /// aux holds one inverse standard deviation per row
    LayerNorm(Var, T),
    Reshape(Var),
    Sum(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    PairConcat(Var),
    PairGeometry(Var),
    Rbf {
        geom: Var,
        mu: Var,
        sigma: Var,
        scale: Var,
        shift: Var,
    },
    Fourier {
        geom: Var,
        omega_phi: Vec<T>,
        omega_theta: Vec<T>,
    },
    TriaLogits {
        q: Var,
        k: Var,
        heads: usize,
        n_valid: usize,
    },
    TriaMix {
        attn: Var,
        v1: Var,
        v2: Var,
        heads: usize,
    },
    MaskEdges {
        x: Var,
        n_valid: usize,
    },
    ForceLoss {
        pred: Var,
        target: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | MulRow(a, b) => {
                vec![*a, *b]
            }
            Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Scale(a, _)
            | Gelu(a)
            | Softmax(a)
            | LayerNorm(a, _)
            | Reshape(a)
            | Sum(a)
            | PairConcat(a)
            | PairGeometry(a) => vec![*a],
            SumAxis { x, .. } | MaskEdges { x, .. } => vec![*x],
            Gather { table, .. } => vec![*table],
            Rbf {
                geom,
                mu,
                sigma,
                scale,
                shift,
            } => vec![*geom, *mu, *sigma, *scale, *shift],
            Fourier { geom, .. } => vec![*geom],
            TriaLogits { q, k, .. } => vec![*q, *k],
            TriaMix { attn, v1, v2, .. } => vec![*attn, *v1, *v2],
            ForceLoss { pred, .. } => vec![*pred],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    aux: Vec<T>,
    requires_grad: bool,
}

/// Single-writer record of one forward evaluation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by one backward sweep, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Adjoint of `v`; zeros when `v` did not influence the seed.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by recorded values and auxiliaries.
    pub fn stored_bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| (n.value.len() + n.aux.len()) * std::mem::size_of::<T>())
            .sum()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Every recorded value in node order.
    pub fn values(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.nodes.iter().map(|n| &n.value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            aux: Vec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op<T>) -> Result<Var> {
        let (value, aux) = self.eval(&op)?;
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            aux,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- recording API -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        self.record(Op::MatMul(a, b))
    }

    /// `x[..., in] · w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sw.len() != 2 || sx.is_empty() || sx[sx.len() - 1] != sw[0] {
            return Err(shape_err("linear", sx, sw));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[1]] {
                return Err(shape_err("linear bias", sw, self.shape(b)));
            }
        }
        self.record(Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        self.record(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.record(Op::Scale(a, c))
    }

    /// Broadcast-add a vector over the last axis.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_compatible("add_row", x, row)?;
        self.record(Op::AddRow(x, row))
    }

    /// Broadcast-multiply a vector over the last axis.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_compatible("mul_row", x, row)?;
        self.record(Op::MulRow(x, row))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Gelu(x))
    }

    pub fn softmax_lastaxis(&mut self, x: Var) -> Result<Var> {
        if self.nodes[x.0].value.last_dim() == 0 {
            return Err(Error::Contract("softmax over empty axis".into()));
        }
        self.record(Op::Softmax(x))
    }

    /// Layer norm over the last axis without affine terms.
    pub fn layer_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        self.record(Op::LayerNorm(x, eps))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.nodes[x.0].value.len() {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let value = self.nodes[x.0].value.clone().reshape(shape)?;
        let requires_grad = self.nodes[x.0].requires_grad;
        self.nodes.push(Node {
            value,
            op: Op::Reshape(x),
            aux: Vec::new(),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sum(x))
    }

    /// Sum a rank-3 tensor over axis 0 or 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        if self.shape(x).len() != 3 || axis > 1 {
            return Err(shape_err("sum_axis", self.shape(x), &[axis]));
        }
        self.record(Op::SumAxis { x, axis })
    }

    /// Row lookup `table[indices[k], :]`.
    pub fn gather(&mut self, table: Var, indices: Vec<usize>) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(shape_err("gather", s, &[]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(Error::Contract(format!(
                "gather index {bad} out of range for {} rows",
                s[0]
            )));
        }
        self.record(Op::Gather { table, indices })
    }

    /// `[N, D] -> [N, N, 2D]` with `out[i, j] = [a_i, a_j]`.
    pub fn pair_concat(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(shape_err("pair_concat", self.shape(a), &[]));
        }
        self.record(Op::PairConcat(a))
    }

    /// `[N, 3]` positions to `[N, N, 3]` channels (distance, azimuth, polar)
    /// of the displacement `r_j - r_i`.
    pub fn pair_geometry(&mut self, positions: Var) -> Result<Var> {
        let s = self.shape(positions);
        if s.len() != 2 || s[1] != 3 {
            return Err(shape_err("pair_geometry", s, &[0, 3]));
        }
        self.record(Op::PairGeometry(positions))
    }

    /// Gaussian radial basis of the distance channel, `[N, N, K]`.
    pub fn rbf(&mut self, geom: Var, mu: Var, sigma: Var, scale: Var, shift: Var) -> Result<Var> {
        let k = self.shape(mu).to_vec();
        if k.len() != 1 || self.shape(sigma) != k.as_slice() {
            return Err(shape_err("rbf", &k, self.shape(sigma)));
        }
        if self.nodes[scale.0].value.len() != 1 || self.nodes[shift.0].value.len() != 1 {
            return Err(Error::Contract("rbf scale/shift must be scalars".into()));
        }
        self.record(Op::Rbf {
            geom,
            mu,
            sigma,
            scale,
            shift,
        })
    }

    /// Fourier features `[sin φω_φ, cos φω_φ, sin θω_θ, cos θω_θ]`.
    pub fn fourier(&mut self, geom: Var, omega_phi: Vec<T>, omega_theta: Vec<T>) -> Result<Var> {
        if omega_phi.len() != omega_theta.len() {
            return Err(Error::Contract("fourier frequency lists differ".into()));
        }
        self.record(Op::Fourier {
            geom,
            omega_phi,
            omega_theta,
        })
    }

    /// Triangular attention logits, layout `[heads, i, j, l]`, scaled by
    /// `1/sqrt(D/heads)`. Indices `l >= n_valid` are masked to `-inf`.
    pub fn tria_logits(&mut self, q: Var, k: Var, heads: usize, n_valid: usize) -> Result<Var> {
        self.same_shape("tria_logits", q, k)?;
        let s = self.shape(q);
        if s.len() != 3 || s[0] != s[1] || heads == 0 || s[2] % heads != 0 || n_valid == 0 {
            return Err(shape_err("tria_logits", s, &[heads]));
        }
        self.record(Op::TriaLogits {
            q,
            k,
            heads,
            n_valid: n_valid.min(s[0]),
        })
    }

    /// `out[i,j,d] = Σ_l attn[h(d),i,j,l] · v1[i,l,d] · v2[l,j,d]`.
    pub fn tria_mix(&mut self, attn: Var, v1: Var, v2: Var, heads: usize) -> Result<Var> {
        self.same_shape("tria_mix", v1, v2)?;
        let s = self.shape(v1);
        let n = s[0];
        if self.shape(attn) != [heads, n, n, n] {
            return Err(shape_err("tria_mix", self.shape(attn), s));
        }
        self.record(Op::TriaMix {
            attn,
            v1,
            v2,
            heads,
        })
    }

    /// Zero every edge `(i, j)` with `i` or `j` outside the first `n_valid`.
    pub fn mask_edges(&mut self, x: Var, n_valid: usize) -> Result<Var> {
        if self.shape(x).len() != 3 {
            return Err(shape_err("mask_edges", self.shape(x), &[]));
        }
        self.record(Op::MaskEdges { x, n_valid })
    }

    /// `(1/N) Σ_i ‖pred_i - target_i‖₂`.
    pub fn force_loss(&mut self, pred: Var, target: Tensor<T>) -> Result<Var> {
        let s = self.shape(pred);
        if s != target.shape() || s.len() != 2 || s[0] == 0 {
            return Err(shape_err("force_loss", s, target.shape()));
        }
        self.record(Op::ForceLoss { pred, target })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn row_compatible(&self, op: &'static str, x: Var, row: Var) -> Result<()> {
        let d = self.nodes[x.0].value.last_dim();
        if self.shape(row) != [d] {
            return Err(shape_err(op, self.shape(x), self.shape(row)));
        }
        Ok(())
    }

    // ---- forward rules -------------------------------------------------

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn eval(&self, op: &Op<T>) -> Result<(Tensor<T>, Vec<T>)> {
        use Op::*;
        let out = match op {
            Leaf => return Err(Error::Contract("leaf has no forward rule".into())),
            MatMul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let mut out = vec![T::zero(); m * n];
                gemm_acc(a.data(), b.data(), &mut out, m, k, n);
                Tensor::from_parts(vec![m, n], out)
            }
            Linear { x, w, b } => {
                let (x, w) = (self.val(*x), self.val(*w));
                let (din, dout) = (w.shape()[0], w.shape()[1]);
                let rows = x.len() / din;
                let mut out = vec![T::zero(); rows * dout];
                if let Some(b) = b {
                    let b = self.val(*b).data();
                    for row in out.chunks_mut(dout) {
                        row.copy_from_slice(b);
                    }
                }
                gemm_acc(x.data(), w.data(), &mut out, rows, din, dout);
                let mut shape = x.shape().to_vec();
                *shape.last_mut().unwrap() = dout;
                Tensor::from_parts(shape, out)
            }
            Add(a, b) => zip(self.val(*a), self.val(*b), |x, y| x + y),
            Sub(a, b) => zip(self.val(*a), self.val(*b), |x, y| x - y),
            Mul(a, b) => zip(self.val(*a), self.val(*b), |x, y| x * y),
            Scale(a, c) => self.val(*a).map(|x| x * *c),
            AddRow(x, r) => row_op(self.val(*x), self.val(*r), |x, y| x + y),
            MulRow(x, r) => row_op(self.val(*x), self.val(*r), |x, y| x * y),
            Gelu(x) => self.val(*x).map(gelu),
            Softmax(x) => crate::tensor::softmax_raw(self.val(*x)),
            LayerNorm(x, eps) => {
                let x = self.val(*x);
                let d = x.last_dim();
                let mut out = x.data().to_vec();
                let mut inv = Vec::with_capacity(out.len() / d.max(1));
                let dn = T::from_usize_lossy(d);
                for row in out.chunks_mut(d) {
                    let mean = row.iter().copied().sum::<T>() / dn;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                    let is = (var + *eps).sqrt().recip();
                    for v in row.iter_mut() {
                        *v = (*v - mean) * is;
                    }
                    inv.push(is);
                }
                return Ok((Tensor::from_parts(x.shape().to_vec(), out), inv));
            }
            Reshape(_) => unreachable!("reshape is recorded directly"),
            Sum(x) => Tensor::scalar(self.val(*x).sum()),
            SumAxis { x, axis } => {
                let x = self.val(*x);
                let [a, b, c] = [x.shape()[0], x.shape()[1], x.shape()[2]];
                let xd = x.data();
                if *axis == 0 {
                    let mut out = vec![T::zero(); b * c];
                    for i in 0..a {
                        for (o, &v) in out.iter_mut().zip(&xd[i * b * c..(i + 1) * b * c]) {
                            *o += v;
                        }
                    }
                    Tensor::from_parts(vec![b, c], out)
                } else {
                    let mut out = vec![T::zero(); a * c];
                    for i in 0..a {
                        let orow = &mut out[i * c..(i + 1) * c];
                        for j in 0..b {
                            let base = (i * b + j) * c;
                            for (o, &v) in orow.iter_mut().zip(&xd[base..base + c]) {
                                *o += v;
                            }
                        }
                    }
                    Tensor::from_parts(vec![a, c], out)
                }
            }
            Gather { table, indices } => {
                let t = self.val(*table);
                let d = t.shape()[1];
                let mut out = Vec::with_capacity(indices.len() * d);
                for &i in indices {
                    out.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
                }
                Tensor::from_parts(vec![indices.len(), d], out)
            }
            PairConcat(a) => {
                let a = self.val(*a);
                let (n, d) = (a.shape()[0], a.shape()[1]);
                let ad = a.data();
                let mut out = Vec::with_capacity(n * n * 2 * d);
                for i in 0..n {
                    for j in 0..n {
                        out.extend_from_slice(&ad[i * d..(i + 1) * d]);
                        out.extend_from_slice(&ad[j * d..(j + 1) * d]);
                    }
                }
                Tensor::from_parts(vec![n, n, 2 * d], out)
            }
            PairGeometry(p) => {
                let p = self.val(*p);
                let n = p.shape()[0];
                let pd = p.data();
                let mut out = vec![T::zero(); n * n * 3];
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let r = displacement(pd, i, j);
                        let (d, phi, theta) = spherical(r);
                        let o = (i * n + j) * 3;
                        out[o] = d;
                        out[o + 1] = phi;
                        out[o + 2] = theta;
                    }
                }
                Tensor::from_parts(vec![n, n, 3], out)
            }
            Rbf {
                geom,
                mu,
                sigma,
                scale,
                shift,
            } => {
                let g = self.val(*geom);
                let (mu, sigma) = (self.val(*mu).data(), self.val(*sigma).data());
                let (m, b) = (self.val(*scale).item(), self.val(*shift).item());
                let k = mu.len();
                let pairs = g.len() / 3;
                let norm = T::lit((2.0 * std::f64::consts::PI).sqrt());
                let mut out = Vec::with_capacity(pairs * k);
                for p in 0..pairs {
                    let u = m * g.data()[p * 3] + b;
                    for (&mk, &sk) in mu.iter().zip(sigma) {
                        let z = (u - mk) / sk;
                        out.push((-(z * z) / T::lit(2.0)).exp() / (norm * sk));
                    }
                }
                let mut shape = g.shape()[..2].to_vec();
                shape.push(k);
                Tensor::from_parts(shape, out)
            }
            Fourier {
                geom,
                omega_phi,
                omega_theta,
            } => {
                let g = self.val(*geom);
                let h = omega_phi.len();
                let pairs = g.len() / 3;
                let mut out = Vec::with_capacity(pairs * 4 * h);
                for p in 0..pairs {
                    let (phi, theta) = (g.data()[p * 3 + 1], g.data()[p * 3 + 2]);
                    out.extend(omega_phi.iter().map(|&w| (phi * w).sin()));
                    out.extend(omega_phi.iter().map(|&w| (phi * w).cos()));
                    out.extend(omega_theta.iter().map(|&w| (theta * w).sin()));
                    out.extend(omega_theta.iter().map(|&w| (theta * w).cos()));
                }
                let mut shape = g.shape()[..2].to_vec();
                shape.push(4 * h);
                Tensor::from_parts(shape, out)
            }
            TriaLogits {
                q,
                k,
                heads,
                n_valid,
            } => tria_logits_forward(self.val(*q), self.val(*k), *heads, *n_valid),
            TriaMix {
                attn,
                v1,
                v2,
                heads,
            } => tria_mix_forward(self.val(*attn), self.val(*v1), self.val(*v2), *heads),
            MaskEdges { x, n_valid } => {
                let x = self.val(*x);
                let mut out = x.clone();
                mask_edges_inplace(&mut out, *n_valid);
                out
            }
            ForceLoss { pred, target } => {
                let p = self.val(*pred);
                let n = p.shape()[0];
                let c = p.shape()[1];
                let mut total = T::zero();
                for i in 0..n {
                    let mut s = T::zero();
                    for k in 0..c {
                        let r = p.data()[i * c + k] - target.data()[i * c + k];
                        s += r * r;
                    }
                    total += s.sqrt();
                }
                Tensor::scalar(total / T::from_usize_lossy(n))
            }
        };
        Ok((out, Vec::new()))
    }

    /// Re-evaluate every recorded op from the stored leaves.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut fresh: Tape<T> = Tape::new();
        for node in &self.nodes {
            match &node.op {
                Op::Leaf => {
                    fresh.push_leaf(node.value.clone(), node.requires_grad);
                }
                Op::Reshape(x) => {
                    let shape = node.value.shape().to_vec();
                    fresh.reshape(*x, &shape)?;
                }
                op => {
                    fresh.record(op.clone())?;
                }
            }
        }
        Ok(fresh.nodes.into_iter().map(|n| n.value).collect())
    }

    // ---- reverse sweep -------------------------------------------------

    /// Gradients of a scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.val(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let seed = Tensor::filled(self.shape(loss), T::one());
        self.backward_with_seed(loss, seed)
    }

    /// Vector-Jacobian product seeded with `seed` at `output`.
    pub fn backward_with_seed(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.shape(output) {
            return Err(shape_err("backward seed", seed.shape(), self.shape(output)));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        use Op::*;
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Leaf => {}
            MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(*a) {
                    let ga = acc(grads, *a, av.shape());
                    gemm_nt_acc(g.data(), bv.data(), ga.data_mut(), m, n, k);
                }
                if self.wants(*b) {
                    let gb = acc(grads, *b, bv.shape());
                    gemm_tn_acc(av.data(), g.data(), gb.data_mut(), m, k, n);
                }
            }
            Linear { x, w, b } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let (din, dout) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.len() / din;
                if self.wants(*x) {
                    let gx = acc(grads, *x, xv.shape());
                    gemm_nt_acc(g.data(), wv.data(), gx.data_mut(), rows, dout, din);
                }
                if self.wants(*w) {
                    let gw = acc(grads, *w, wv.shape());
                    gemm_tn_acc(xv.data(), g.data(), gw.data_mut(), rows, din, dout);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let gb = acc(grads, *b, &[dout]);
                        for row in g.data().chunks(dout) {
                            for (o, &v) in gb.data_mut().iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                }
            }
            Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        acc(grads, v, g.shape()).add_assign(g);
                    }
                }
            }
            Sub(a, b) => {
                if self.wants(*a) {
                    acc(grads, *a, g.shape()).add_assign(g);
                }
                if self.wants(*b) {
                    let gb = acc(grads, *b, g.shape());
                    for (o, &v) in gb.data_mut().iter_mut().zip(g.data()) {
                        *o -= v;
                    }
                }
            }
            Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.wants(*a) {
                    let ga = acc(grads, *a, g.shape());
                    for ((o, &gv), &bb) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *o += gv * bb;
                    }
                }
                if self.wants(*b) {
                    let gb = acc(grads, *b, g.shape());
                    for ((o, &gv), &aa) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += gv * aa;
                    }
                }
            }
            Scale(a, c) => {
                let ga = acc(grads, *a, g.shape());
                for (o, &v) in ga.data_mut().iter_mut().zip(g.data()) {
                    *o += v * *c;
                }
            }
            AddRow(x, r) => {
                if self.wants(*x) {
                    acc(grads, *x, g.shape()).add_assign(g);
                }
                if self.wants(*r) {
                    let d = g.last_dim();
                    let gr = acc(grads, *r, &[d]);
                    for row in g.data().chunks(d) {
                        for (o, &v) in gr.data_mut().iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            MulRow(x, r) => {
                let (xv, rv) = (self.val(*x), self.val(*r));
                let d = g.last_dim();
                if self.wants(*x) {
                    let gx = acc(grads, *x, g.shape());
                    for (orow, grow) in gx.data_mut().chunks_mut(d).zip(g.data().chunks(d)) {
                        for ((o, &gv), &rr) in orow.iter_mut().zip(grow).zip(rv.data()) {
                            *o += gv * rr;
                        }
                    }
                }
                if self.wants(*r) {
                    let gr = acc(grads, *r, &[d]);
                    for (grow, xrow) in g.data().chunks(d).zip(xv.data().chunks(d)) {
                        for ((o, &gv), &xx) in gr.data_mut().iter_mut().zip(grow).zip(xrow) {
                            *o += gv * xx;
                        }
                    }
                }
            }
            Gelu(x) => {
                let xv = self.val(*x);
                let gx = acc(grads, *x, g.shape());
                for ((o, &gv), &xx) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    *o += gv * gelu_grad(xx);
                }
            }
            Softmax(x) => {
                let d = y.last_dim();
                let gx = acc(grads, *x, g.shape());
                for ((orow, grow), yrow) in gx
                    .data_mut()
                    .chunks_mut(d)
                    .zip(g.data().chunks(d))
                    .zip(y.data().chunks(d))
                {
                    let s = dot(grow, yrow);
                    for ((o, &gv), &yv) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o += yv * (gv - s);
                    }
                }
            }
            LayerNorm(x, _) => {
                let d = y.last_dim();
                let dn = T::from_usize_lossy(d);
                let gx = acc(grads, *x, g.shape());
                for (((orow, grow), yrow), &inv) in gx
                    .data_mut()
                    .chunks_mut(d)
                    .zip(g.data().chunks(d))
                    .zip(y.data().chunks(d))
                    .zip(&node.aux)
                {
                    let sg: T = grow.iter().copied().sum();
                    let sgy = dot(grow, yrow);
                    for ((o, &gv), &yv) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o += inv / dn * (dn * gv - sg - yv * sgy);
                    }
                }
            }
            Reshape(x) => {
                let xs = self.shape(*x).to_vec();
                let gx = acc(grads, *x, &xs);
                for (o, &v) in gx.data_mut().iter_mut().zip(g.data()) {
                    *o += v;
                }
            }
            Sum(x) => {
                let s = g.item();
                let gx = acc(grads, *x, self.shape(*x));
                for o in gx.data_mut() {
                    *o += s;
                }
            }
            SumAxis { x, axis } => {
                let xs = self.shape(*x).to_vec();
                let [a, b, c] = [xs[0], xs[1], xs[2]];
                let gx = acc(grads, *x, &xs);
                let gd = g.data();
                for i in 0..a {
                    for j in 0..b {
                        let src = if *axis == 0 { j * c } else { i * c };
                        let dst = (i * b + j) * c;
                        for t in 0..c {
                            gx.data_mut()[dst + t] += gd[src + t];
                        }
                    }
                }
            }
            Gather { table, indices } => {
                let ts = self.shape(*table).to_vec();
                let d = ts[1];
                let gt = acc(grads, *table, &ts);
                for (k, &i) in indices.iter().enumerate() {
                    for t in 0..d {
                        gt.data_mut()[i * d + t] += g.data()[k * d + t];
                    }
                }
            }
            PairConcat(a) => {
                let s = self.shape(*a).to_vec();
                let (n, d) = (s[0], s[1]);
                let ga = acc(grads, *a, &s);
                let gd = g.data();
                for i in 0..n {
                    for j in 0..n {
                        let base = (i * n + j) * 2 * d;
                        for t in 0..d {
                            ga.data_mut()[i * d + t] += gd[base + t];
                            ga.data_mut()[j * d + t] += gd[base + d + t];
                        }
                    }
                }
            }
            PairGeometry(p) => {
                let pv = self.val(*p);
                let n = pv.shape()[0];
                let gp = acc(grads, *p, pv.shape());
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let o = (i * n + j) * 3;
                        let gr = spherical_vjp(
                            displacement(pv.data(), i, j),
                            [g.data()[o], g.data()[o + 1], g.data()[o + 2]],
                        );
                        for c in 0..3 {
                            gp.data_mut()[j * 3 + c] += gr[c];
                            gp.data_mut()[i * 3 + c] -= gr[c];
                        }
                    }
                }
            }
            Rbf {
                geom,
                mu,
                sigma,
                scale,
                shift,
            } => self.rbf_backward(g, y, *geom, *mu, *sigma, *scale, *shift, grads),
            Fourier {
                geom,
                omega_phi,
                omega_theta,
            } => {
                let gv = self.val(*geom);
                let h = omega_phi.len();
                let pairs = gv.len() / 3;
                let gg = acc(grads, *geom, gv.shape());
                for p in 0..pairs {
                    let (phi, theta) = (gv.data()[p * 3 + 1], gv.data()[p * 3 + 2]);
                    let row = &g.data()[p * 4 * h..(p + 1) * 4 * h];
                    let mut dphi = T::zero();
                    let mut dtheta = T::zero();
                    for k in 0..h {
                        let (wp, wt) = (omega_phi[k], omega_theta[k]);
                        dphi += row[k] * wp * (phi * wp).cos() - row[h + k] * wp * (phi * wp).sin();
                        dtheta += row[2 * h + k] * wt * (theta * wt).cos()
                            - row[3 * h + k] * wt * (theta * wt).sin();
                    }
                    gg.data_mut()[p * 3 + 1] += dphi;
                    gg.data_mut()[p * 3 + 2] += dtheta;
                }
            }
            TriaLogits { q, k, heads, .. } => {
                let (qv, kv) = (self.val(*q), self.val(*k));
                let shape = qv.shape().to_vec();
                let mut gq = self.wants(*q).then(|| Tensor::zeros(&shape));
                let mut gk = self.wants(*k).then(|| Tensor::zeros(&shape));
                tria_logits_backward(
                    qv,
                    kv,
                    g,
                    *heads,
                    gq.as_mut().map(|t| t.data_mut()),
                    gk.as_mut().map(|t| t.data_mut()),
                );
                if let Some(t) = gq {
                    acc(grads, *q, &shape).add_assign(&t);
                }
                if let Some(t) = gk {
                    acc(grads, *k, &shape).add_assign(&t);
                }
            }
            TriaMix {
                attn,
                v1,
                v2,
                heads,
            } => {
                let (av, v1v, v2v) = (self.val(*attn), self.val(*v1), self.val(*v2));
                let mut ga = self.wants(*attn).then(|| Tensor::zeros(av.shape()));
                let mut g1 = self.wants(*v1).then(|| Tensor::zeros(v1v.shape()));
                let mut g2 = self.wants(*v2).then(|| Tensor::zeros(v2v.shape()));
                tria_mix_backward(
                    av,
                    v1v,
                    v2v,
                    g,
                    *heads,
                    ga.as_mut().map(|t| t.data_mut()),
                    g1.as_mut().map(|t| t.data_mut()),
                    g2.as_mut().map(|t| t.data_mut()),
                );
                for (v, t) in [(*attn, ga), (*v1, g1), (*v2, g2)] {
                    if let Some(t) = t {
                        let s = t.shape().to_vec();
                        acc(grads, v, &s).add_assign(&t);
                    }
                }
            }
            MaskEdges { x, n_valid } => {
                let mut gm = g.clone();
                mask_edges_inplace(&mut gm, *n_valid);
                acc(grads, *x, g.shape()).add_assign(&gm);
            }
            ForceLoss { pred, target } => {
                let pv = self.val(*pred);
                let (n, c) = (pv.shape()[0], pv.shape()[1]);
                let s = g.item() / T::from_usize_lossy(n);
                let gp = acc(grads, *pred, pv.shape());
                for i in 0..n {
                    let r: Vec<T> = (0..c)
                        .map(|k| pv.data()[i * c + k] - target.data()[i * c + k])
                        .collect();
                    let norm = r.iter().map(|&v| v * v).sum::<T>().sqrt();
                    if norm > T::zero() {
                        for k in 0..c {
                            gp.data_mut()[i * c + k] += s * r[k] / norm;
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn rbf_backward(
        &self,
        g: &Tensor<T>,
        y: &Tensor<T>,
        geom: Var,
        mu: Var,
        sigma: Var,
        scale: Var,
        shift: Var,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let gv = self.val(geom);
        let (muv, sv) = (self.val(mu).data(), self.val(sigma).data());
        let (m, b) = (self.val(scale).item(), self.val(shift).item());
        let k = muv.len();
        let pairs = gv.len() / 3;
        let n = gv.shape()[0];
        let mut gmu = vec![T::zero(); k];
        let mut gsig = vec![T::zero(); k];
        let (mut gm, mut gb) = (T::zero(), T::zero());
        let mut gd = vec![T::zero(); pairs];
        for p in 0..pairs {
            let d = gv.data()[p * 3];
            let u = m * d + b;
            let mut du = T::zero();
            for t in 0..k {
                let v = y.data()[p * k + t];
                let gg = g.data()[p * k + t];
                let (mk, sk) = (muv[t], sv[t]);
                let e = u - mk;
                let s2 = sk * sk;
                let dv_du = -v * e / s2;
                du += gg * dv_du;
                gmu[t] -= gg * dv_du;
                gsig[t] += gg * v * (e * e / (s2 * sk) - sk.recip());
            }
            gm += du * d;
            gb += du;
            // self-loop distances are constants of the geometry
            if p / n != p % n {
                gd[p] = du * m;
            }
        }
        if self.wants(geom) {
            let gg = acc(grads, geom, gv.shape());
            for p in 0..pairs {
                gg.data_mut()[p * 3] += gd[p];
            }
        }
        for (v, vals) in [(mu, gmu), (sigma, gsig)] {
            if self.wants(v) {
                let t = acc(grads, v, &[k]);
                for (o, x) in t.data_mut().iter_mut().zip(vals) {
                    *o += x;
                }
            }
        }
        for (v, x) in [(scale, gm), (shift, gb)] {
            if self.wants(v) {
                let s = self.shape(v).to_vec();
                acc(grads, v, &s).data_mut()[0] += x;
            }
        }
    }
}

fn acc<'a, T: Real>(
    grads: &'a mut [Option<Tensor<T>>],
    v: Var,
    shape: &[usize],
) -> &'a mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn row_op<T: Real>(x: &Tensor<T>, r: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let d = r.len();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        for (o, &rv) in row.iter_mut().zip(r.data()) {
            *o = f(*o, rv);
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::lit(SQRT_2_OVER_PI);
    let u = c * (x + T::lit(GELU_C) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit(SQRT_2_OVER_PI);
    let k = T::lit(GELU_C);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x)
}

#[inline]
fn displacement<T: Real>(p: &[T], i: usize, j: usize) -> [T; 3] {
    [
        p[j * 3] - p[i * 3],
        p[j * 3 + 1] - p[i * 3 + 1],
        p[j * 3 + 2] - p[i * 3 + 2],
    ]
}

/// Distance, azimuth in (-π, π] and polar angle in [0, π]; zero vector maps to zeros.
pub(crate) fn spherical<T: Real>(r: [T; 3]) -> (T, T, T) {
    let rho = (r[0] * r[0] + r[1] * r[1]).sqrt();
    let d = (rho * rho + r[2] * r[2]).sqrt();
    if d == T::zero() {
        return (T::zero(), T::zero(), T::zero());
    }
    (d, r[1].atan2(r[0]), rho.atan2(r[2]))
}

fn spherical_vjp<T: Real>(r: [T; 3], g: [T; 3]) -> [T; 3] {
    let [x, y, z] = r;
    let rho2 = x * x + y * y;
    let rho = rho2.sqrt();
    let d2 = rho2 + z * z;
    let d = d2.sqrt();
    let mut out = [T::zero(); 3];
    if d == T::zero() {
        return out;
    }
    for c in 0..3 {
        out[c] = g[0] * r[c] / d;
    }
    if rho > T::zero() {
        // azimuth
        out[0] -= g[1] * y / rho2;
        out[1] += g[1] * x / rho2;
        // polar
        let s = g[2] * z / (d2 * rho);
        out[0] += s * x;
        out[1] += s * y;
    }
    out[2] -= g[2] * rho / d2;
    out
}

fn mask_edges_inplace<T: Real>(t: &mut Tensor<T>, n_valid: usize) {
    let (n, d) = (t.shape()[0], t.shape()[2]);
    let data = t.data_mut();
    for i in 0..n {
        for j in 0..n {
            if i >= n_valid || j >= n_valid {
                data[(i * n + j) * d..(i * n + j + 1) * d]
                    .iter_mut()
                    .for_each(|v| *v = T::zero());
            }
        }
    }
}

/// For each head `h` and each intermediate `l`, `S[h,:,:,l]` is the product of
/// the `[N×dh]` slab `Q[:,l,h]` with the transpose of `K[l,:,h]`.
fn tria_logits_forward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    heads: usize,
    n_valid: usize,
) -> Tensor<T> {
    let n = q.shape()[0];
    let d = q.shape()[2];
    let dh = d / heads;
    let scale = T::from_usize_lossy(dh).sqrt().recip();
    let (qd, kd) = (q.data(), k.data());
    let mut out = vec![T::zero(); heads * n * n * n];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            for j in 0..n {
                let orow = &mut out[((h * n + i) * n + j) * n..((h * n + i) * n + j + 1) * n];
                for (l, o) in orow.iter_mut().enumerate() {
                    if l >= n_valid {
                        *o = T::neg_infinity();
                        continue;
                    }
                    let qa = (i * n + l) * d + off;
                    let ka = (l * n + j) * d + off;
                    *o = dot(&qd[qa..qa + dh], &kd[ka..ka + dh]) * scale;
                }
            }
        }
    }
    Tensor::from_parts(vec![heads, n, n, n], out)
}

fn tria_logits_backward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    g: &Tensor<T>,
    heads: usize,
    mut gq: Option<&mut [T]>,
    mut gk: Option<&mut [T]>,
) {
    let n = q.shape()[0];
    let d = q.shape()[2];
    let dh = d / heads;
    let scale = T::from_usize_lossy(dh).sqrt().recip();
    let (qd, kd, gd) = (q.data(), k.data(), g.data());
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            for j in 0..n {
                let grow = &gd[((h * n + i) * n + j) * n..((h * n + i) * n + j + 1) * n];
                for (l, &gs) in grow.iter().enumerate() {
                    if gs == T::zero() {
                        continue;
                    }
                    let gs = gs * scale;
                    let qa = (i * n + l) * d + off;
                    let ka = (l * n + j) * d + off;
                    if let Some(gq) = gq.as_deref_mut() {
                        for t in 0..dh {
                            gq[qa + t] += gs * kd[ka + t];
                        }
                    }
                    if let Some(gk) = gk.as_deref_mut() {
                        for t in 0..dh {
                            gk[ka + t] += gs * qd[qa + t];
                        }
                    }
                }
            }
        }
    }
}

fn tria_mix_forward<T: Real>(
    a: &Tensor<T>,
    v1: &Tensor<T>,
    v2: &Tensor<T>,
    heads: usize,
) -> Tensor<T> {
    let n = v1.shape()[0];
    let d = v1.shape()[2];
    let dh = d / heads;
    let (ad, v1d, v2d) = (a.data(), v1.data(), v2.data());
    let mut out = vec![T::zero(); n * n * d];
    let mut prod = vec![T::zero(); d];
    for i in 0..n {
        for l in 0..n {
            let x1 = &v1d[(i * n + l) * d..(i * n + l + 1) * d];
            for j in 0..n {
                let x2 = &v2d[(l * n + j) * d..(l * n + j + 1) * d];
                for t in 0..d {
                    prod[t] = x1[t] * x2[t];
                }
                let orow = &mut out[(i * n + j) * d..(i * n + j + 1) * d];
                for h in 0..heads {
                    let w = ad[((h * n + i) * n + j) * n + l];
                    if w == T::zero() {
                        continue;
                    }
                    for t in h * dh..(h + 1) * dh {
                        orow[t] += w * prod[t];
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![n, n, d], out)
}

#[allow(clippy::too_many_arguments)]
fn tria_mix_backward<T: Real>(
    a: &Tensor<T>,
    v1: &Tensor<T>,
    v2: &Tensor<T>,
    g: &Tensor<T>,
    heads: usize,
    mut ga: Option<&mut [T]>,
    mut g1: Option<&mut [T]>,
    mut g2: Option<&mut [T]>,
) {
    let n = v1.shape()[0];
    let d = v1.shape()[2];
    let dh = d / heads;
    let (ad, v1d, v2d, gd) = (a.data(), v1.data(), v2.data(), g.data());
    for i in 0..n {
        for l in 0..n {
            let b1 = (i * n + l) * d;
            for j in 0..n {
                let b2 = (l * n + j) * d;
                let bo = (i * n + j) * d;
                for h in 0..heads {
                    let ai = ((h * n + i) * n + j) * n + l;
                    let w = ad[ai];
                    let mut gw = T::zero();
                    for t in h * dh..(h + 1) * dh {
                        let go = gd[bo + t];
                        let (x1, x2) = (v1d[b1 + t], v2d[b2 + t]);
                        gw += go * x1 * x2;
                        if let Some(g1) = g1.as_deref_mut() {
                            g1[b1 + t] += go * w * x2;
                        }
                        if let Some(g2) = g2.as_deref_mut() {
                            g2[b2 + t] += go * w * x1;
                        }
                    }
                    if let Some(ga) = ga.as_deref_mut() {
                        ga[ai] += gw;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::randn(&[3, 4], 1.0, &mut rng()));
        let s = tape.sum(w).unwrap();
        let g = tape.backward(s).unwrap().wrt(w);
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn quadratic_form_gradient() {
        // loss = ‖W x‖², dL/dW = 2 (W x) xᵀ
        let mut r = rng();
        let wt = Tensor::<f64>::randn(&[3, 2], 1.0, &mut r);
        let xt = Tensor::<f64>::randn(&[2, 1], 1.0, &mut r);
        let mut tape = Tape::new();
        let w = tape.param(wt.clone());
        let x = tape.constant(xt.clone());
        let wx = tape.matmul(w, x).unwrap();
        let sq = tape.mul(wx, wx).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap().wrt(w);
        let wxv = crate::tensor::matmul_raw(&wt, &xt).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let expect = 2.0 * wxv.at(&[i, 0]) * xt.at(&[j, 0]);
                assert!((g.at(&[i, j]) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unreferenced_leaf_gets_zero() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::filled(&[2], 1.0));
        let b = tape.param(Tensor::filled(&[5], 1.0));
        let s = tape.sum(a).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(b), Tensor::zeros(&[5]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::filled(&[2], 1.0));
        let b = tape.scale(a, 2.0).unwrap();
        assert!(matches!(tape.backward(b), Err(Error::Contract(_))));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut r = rng();
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::randn(&[4, 6], 1.0, &mut r));
        let w = tape.param(Tensor::randn(&[6, 3], 1.0, &mut r));
        let h = tape.linear(x, w, None).unwrap();
        let h = tape.gelu(h).unwrap();
        let h = tape.layer_norm(h, 1e-5).unwrap();
        let h = tape.softmax_lastaxis(h).unwrap();
        let _ = tape.sum(h).unwrap();
        let replayed = tape.replay().unwrap();
        for (i, t) in replayed.iter().enumerate() {
            let orig = tape.value(Var(i));
            let same = orig
                .data()
                .iter()
                .zip(t.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "node {i} differs on replay");
        }
    }

    #[test]
    fn self_loop_geometry_is_zero() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::from_f64(&[2, 3], &[0., 0., 0., 1., 1., 0.]).unwrap());
        let g = tape.pair_geometry(p).unwrap();
        let v = tape.value(g);
        assert_eq!(&v.data()[0..3], &[0.0, 0.0, 0.0]);
        assert!((v.at(&[0, 1, 0]) - 2f64.sqrt()).abs() < 1e-15);
        assert!((v.at(&[0, 1, 1]) - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!((v.at(&[0, 1, 2]) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }
}
