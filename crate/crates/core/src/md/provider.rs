//! Anything that maps a configuration to forces.

use crate::dataio::potentials::SyntheticPotential;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Real;
use crate::system::MolecularSystem;

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// eV/Å
    pub forces: Vec<[f64; 3]>,
    /// eV, when the provider has a scalar potential
    pub energy: Option<f64>,
}

pub trait ForceProvider: Send + Sync {
    fn evaluate(&self, sys: &MolecularSystem) -> Result<Evaluation>;

    /// Exact `∂f/∂x` (row-major `3N × 3N`) when the provider can supply one.
    fn jacobian(&self, _sys: &MolecularSystem) -> Option<Result<Vec<f64>>> {
        None
    }

    fn describe(&self) -> String;
}

impl ForceProvider for SyntheticPotential {
    fn evaluate(&self, sys: &MolecularSystem) -> Result<Evaluation> {
        let (e, f) = self.energy_forces(&sys.atomic_numbers, &sys.positions);
        Ok(Evaluation {
            forces: f,
            energy: Some(e),
        })
    }

    fn jacobian(&self, sys: &MolecularSystem) -> Option<Result<Vec<f64>>> {
        let h = self.hessian(&sys.atomic_numbers, &sys.positions);
        Some(Ok(h.into_iter().map(|v| -v).collect()))
    }

    fn describe(&self) -> String {
        match self {
            SyntheticPotential::Morse(_) => "morse".into(),
            SyntheticPotential::LennardJones(_) => "lennard_jones".into(),
            SyntheticPotential::HarmonicNetwork(_) => "harmonic_network".into(),
        }
    }
}

/// Learned model evaluated at precision `T`.
#[derive(Clone, Debug)]
pub struct ModelProvider<T> {
    pub model: Model<T>,
}

impl<T: Real> ForceProvider for ModelProvider<T> {
    fn evaluate(&self, sys: &MolecularSystem) -> Result<Evaluation> {
        Ok(Evaluation {
            forces: self.model.predict_forces(sys)?,
            energy: None,
        })
    }

    fn jacobian(&self, sys: &MolecularSystem) -> Option<Result<Vec<f64>>> {
        Some(self.model.position_jacobian(sys))
    }

    fn describe(&self) -> String {
        format!("model(f{})", T::BITS)
    }
}

/// The same world-frame vector on every atom, whatever the geometry.
#[derive(Clone, Copy, Debug)]
pub struct ConstantProvider(pub [f64; 3]);

impl ForceProvider for ConstantProvider {
    fn evaluate(&self, sys: &MolecularSystem) -> Result<Evaluation> {
        Ok(Evaluation {
            forces: vec![self.0; sys.n_atoms()],
            energy: None,
        })
    }

    fn jacobian(&self, sys: &MolecularSystem) -> Option<Result<Vec<f64>>> {
        let n3 = 3 * sys.n_atoms();
        Some(Ok(vec![0.0; n3 * n3]))
    }

    fn describe(&self) -> String {
        "constant".into()
    }
}

/// `f = A x` on flattened coordinates.
#[derive(Clone, Debug)]
pub struct LinearProvider {
    pub matrix: Vec<f64>,
}

impl ForceProvider for LinearProvider {
    fn evaluate(&self, sys: &MolecularSystem) -> Result<Evaluation> {
        let x = sys.flat_positions();
        let n3 = x.len();
        if self.matrix.len() != n3 * n3 {
            return Err(Error::Shape {
                op: "linear provider",
                lhs: vec![self.matrix.len()],
                rhs: vec![n3, n3],
            });
        }
        let f: Vec<f64> = (0..n3)
            .map(|a| (0..n3).map(|b| self.matrix[a * n3 + b] * x[b]).sum())
            .collect();
        Ok(Evaluation {
            forces: f.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
            energy: None,
        })
    }

    fn jacobian(&self, _sys: &MolecularSystem) -> Option<Result<Vec<f64>>> {
        Some(Ok(self.matrix.clone()))
    }

    fn describe(&self) -> String {
        "linear".into()
    }
}

/// Closure-backed provider.
pub struct FnProvider<F>(pub F);

impl<F> ForceProvider for FnProvider<F>
where
    F: Fn(&MolecularSystem) -> Result<Evaluation> + Send + Sync,
{
    fn evaluate(&self, sys: &MolecularSystem) -> Result<Evaluation> {
        (self.0)(sys)
    }

    fn describe(&self) -> String {
        "closure".into()
    }
}
