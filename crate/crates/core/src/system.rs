use serde::{Deserialize, Serialize};

use crate::dataio::elements;
use crate::error::{Error, Result};

/// One molecule: atoms, Cartesian positions in Å and optional labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MolecularSystem {
    pub atomic_numbers: Vec<u32>,
    pub positions: Vec<[f64; 3]>,
    /// Number of unpaired electrons.
    pub spin: u32,
    pub charge: i32,
    /// eV/Å
    pub forces: Option<Vec<[f64; 3]>>,
    /// eV
    pub energy: Option<f64>,
}

impl MolecularSystem {
    pub fn new(atomic_numbers: Vec<u32>, positions: Vec<[f64; 3]>) -> Result<Self> {
        let s = Self {
            atomic_numbers,
            positions,
            spin: 0,
            charge: 0,
            forces: None,
            energy: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_forces(mut self, forces: Vec<[f64; 3]>) -> Result<Self> {
        self.forces = Some(forces);
        self.validate()?;
        Ok(self)
    }

    pub fn n_atoms(&self) -> usize {
        self.atomic_numbers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.atomic_numbers.len();
        if n == 0 {
            return Err(Error::Invalid("system has no atoms".into()));
        }
        if self.positions.len() != n {
            return Err(Error::Invalid(format!(
                "{} atomic numbers but {} positions",
                n,
                self.positions.len()
            )));
        }
        if let Some(&z) = self.atomic_numbers.iter().find(|&&z| z == 0) {
            return Err(Error::Invalid(format!("atomic number {z} is not positive")));
        }
        if self.positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::non_finite("positions"));
        }
        if let Some(f) = &self.forces {
            if f.len() != n {
                return Err(Error::Invalid(format!(
                    "{} force rows for {} atoms",
                    f.len(),
                    n
                )));
            }
        }
        Ok(())
    }

    /// Masses in amu from the element table.
    pub fn masses(&self) -> Result<Vec<f64>> {
        self.atomic_numbers
            .iter()
            .map(|&z| elements::mass(z).ok_or_else(|| Error::Invalid(format!("no mass for Z={z}"))))
            .collect()
    }

    pub fn flat_positions(&self) -> Vec<f64> {
        self.positions.iter().flatten().copied().collect()
    }

    /// Pairwise distances `(i < j)`.
    pub fn pair_distances(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..self.n_atoms() {
            for j in i + 1..self.n_atoms() {
                out.push(distance(&self.positions[i], &self.positions[j]));
            }
        }
        out
    }

    /// Reorder atoms so that new atom `k` is old atom `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |v: &Vec<[f64; 3]>| perm.iter().map(|&p| v[p]).collect::<Vec<_>>();
        Self {
            atomic_numbers: perm.iter().map(|&p| self.atomic_numbers[p]).collect(),
            positions: pick(&self.positions),
            spin: self.spin,
            charge: self.charge,
            forces: self.forces.as_ref().map(pick),
            energy: self.energy,
        }
    }
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
