//! Position Jacobians of force providers and their antisymmetric share.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::md::ForceProvider;
use crate::system::MolecularSystem;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// The provider's own derivative (one backward pass per output row for
    /// the learned model).
    Autodiff,
    /// Fourth-order central differences with step `h` in Å.
    FiniteDifference { h: f64 },
}

impl JacobianMode {
    pub fn finite_difference() -> Self {
        JacobianMode::FiniteDifference { h: 1e-4 }
    }
}

/// Row-major `3N × 3N` matrix `J[a][b] = ∂f_a / ∂x_b`.
pub fn position_jacobian(
    provider: &dyn ForceProvider,
    sys: &MolecularSystem,
    mode: JacobianMode,
) -> Result<Vec<f64>> {
    let n3 = 3 * sys.n_atoms();
    let j = match mode {
        JacobianMode::Autodiff => provider.jacobian(sys).ok_or_else(|| {
            Error::Invalid(format!(
                "provider '{}' has no analytic Jacobian",
                provider.describe()
            ))
        })??,
        JacobianMode::FiniteDifference { h } => {
            if !(h > 0.0) {
                return Err(Error::Invalid(format!(
                    "finite-difference step must be positive, got {h}"
                )));
            }
            let mut j = vec![0.0; n3 * n3];
            let mut work = sys.clone();
            work.forces = None;
            // fourth-order central stencil: (−f(+2h) + 8f(+h) − 8f(−h) + f(−2h)) / 12h
            let stencil = [(2.0, -1.0), (1.0, 8.0), (-1.0, -8.0), (-2.0, 1.0)];
            for b in 0..n3 {
                let (atom, c) = (b / 3, b % 3);
                let x0 = sys.positions[atom][c];
                for (offset, weight) in stencil {
                    work.positions[atom][c] = x0 + offset * h;
                    let f = provider.evaluate(&work)?.forces;
                    for a in 0..n3 {
                        j[a * n3 + b] += weight * f[a / 3][a % 3] / (12.0 * h);
                    }
                }
                work.positions[atom][c] = x0;
            }
            j
        }
    };
    if j.len() != n3 * n3 {
        return Err(Error::Shape {
            op: "position_jacobian",
            lhs: vec![j.len()],
            rhs: vec![n3, n3],
        });
    }
    if j.iter().any(|x| !x.is_finite()) {
        return Err(Error::non_finite("position Jacobian"));
    }
    Ok(j)
}

/// `λ = ‖(J − Jᵀ)/2‖_F / ‖J‖_F` for a row-major `n × n` matrix.
pub fn antisymmetric_ratio(j: &[f64], n: usize) -> Result<f64> {
    if j.len() != n * n {
        return Err(Error::Shape {
            op: "antisymmetric_ratio",
            lhs: vec![j.len()],
            rhs: vec![n, n],
        });
    }
    let total: f64 = j.iter().map(|x| x * x).sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::Invalid(
            "λ is undefined for a zero or non-finite matrix".into(),
        ));
    }
    let mut anti = 0.0;
    for a in 0..n {
        for b in 0..n {
            let d = 0.5 * (j[a * n + b] - j[b * n + a]);
            anti += d * d;
        }
    }
    Ok((anti / total).sqrt())
}
