//! Synthetic labelled corpora and structure-grouped splitting.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use super::potentials::SyntheticPotential;
use crate::error::{Error, Result};
use crate::system::{distance, MolecularSystem};

/// Systems plus a structure key per system; conformers share a key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub systems: Vec<MolecularSystem>,
    pub groups: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }

    pub fn n_groups(&self) -> usize {
        let mut g = self.groups.clone();
        g.sort_unstable();
        g.dedup();
        g.len()
    }

    /// Mean per-atom force norm over all labels.
    pub fn mean_force_norm(&self) -> f64 {
        let (mut s, mut n) = (0.0, 0usize);
        for sys in &self.systems {
            if let Some(f) = &sys.forces {
                for r in f {
                    s += (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_structures: usize,
    pub conformers_per_structure: usize,
    /// Gaussian displacement std, Å.
    pub spread: f64,
    pub min_atoms: usize,
    pub max_atoms: usize,
    pub species: Vec<u32>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_structures: 100,
            conformers_per_structure: 8,
            spread: 0.08,
            min_atoms: 2,
            max_atoms: 5,
            species: vec![1, 6, 7, 8],
        }
    }
}

/// Grow a compact cluster: each atom bonds to a random earlier atom at
/// `bond` Å while keeping every other distance above `0.85·bond`.
pub fn random_parent<R: Rng + ?Sized>(
    n: usize,
    species: &[u32],
    bond: f64,
    rng: &mut R,
) -> MolecularSystem {
    let mut pos: Vec<[f64; 3]> = vec![[0.0; 3]];
    while pos.len() < n {
        let anchor = pos[rng.random_range(0..pos.len())];
        let dir: [f64; 3] = UnitSphere.sample(rng);
        let cand = [
            anchor[0] + bond * dir[0],
            anchor[1] + bond * dir[1],
            anchor[2] + bond * dir[2],
        ];
        if pos.iter().all(|p| distance(p, &cand) >= 0.85 * bond - 1e-9) {
            pos.push(cand);
        }
    }
    let z = (0..n)
        .map(|_| species[rng.random_range(0..species.len())])
        .collect();
    MolecularSystem::new(z, pos).expect("generated system is valid")
}

pub fn generate_synthetic<R: Rng + ?Sized>(
    potential: &SyntheticPotential,
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Result<Dataset> {
    if spec.n_structures == 0 || spec.conformers_per_structure == 0 {
        return Err(Error::Invalid(
            "structure and conformer counts must be positive".into(),
        ));
    }
    if spec.min_atoms == 0 || spec.max_atoms < spec.min_atoms || spec.species.is_empty() {
        return Err(Error::Invalid(
            "bad atom-count range or empty species list".into(),
        ));
    }
    let mut ds = Dataset::default();
    for g in 0..spec.n_structures {
        let n = rng.random_range(spec.min_atoms..=spec.max_atoms);
        let parent = random_parent(n, &spec.species, potential.bond_length(), rng);
        for _ in 0..spec.conformers_per_structure {
            let mut c = parent.clone();
            if spec.spread > 0.0 {
                let noise = Normal::new(0.0, spec.spread).expect("positive spread");
                for p in &mut c.positions {
                    for x in p.iter_mut() {
                        *x += noise.sample(rng);
                    }
                }
            }
            ds.systems.push(potential.label(&c));
            ds.groups.push(g);
        }
    }
    Ok(ds)
}

/// Group-preserving split. Fractions must sum to one; each split gets at least
/// one group when its fraction is positive.
pub fn split(ds: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f < 0.0) {
        return Err(Error::Invalid(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut keys = ds.groups.clone();
    keys.sort_unstable();
    keys.dedup();
    let needed = fractions.iter().filter(|&&f| f > 0.0).count();
    if keys.len() < needed {
        return Err(Error::Invalid(format!(
            "{} structure groups cannot fill {needed} splits",
            keys.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    keys.shuffle(&mut rng);
    let n = keys.len();
    let count = |f: f64| {
        if f > 0.0 {
            ((f * n as f64).round() as usize).max(1)
        } else {
            0
        }
    };
    let n_val = count(fractions[1]);
    let n_test = count(fractions[2]);
    let n_train = n - n_val - n_test;
    let mut which = std::collections::HashMap::new();
    for (k, g) in keys.iter().enumerate() {
        let s = if k < n_train {
            0
        } else if k < n_train + n_val {
            1
        } else {
            2
        };
        which.insert(*g, s);
    }
    let mut parts = [Dataset::default(), Dataset::default(), Dataset::default()];
    for (sys, g) in ds.systems.iter().zip(&ds.groups) {
        let p = &mut parts[which[g]];
        p.systems.push(sys.clone());
        p.groups.push(*g);
    }
    let [a, b, c] = parts;
    Ok((a, b, c))
}
