//! Analytic pair potentials with exact forces and Hessians.

use serde::{Deserialize, Serialize};

use crate::system::MolecularSystem;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorseParams {
    /// well depth, eV
    pub depth: f64,
    /// width, 1/Å
    pub width: f64,
    /// equilibrium distance, Å
    pub r_eq: f64,
}

impl Default for MorseParams {
    fn default() -> Self {
        Self {
            depth: 0.5,
            width: 1.5,
            r_eq: 1.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LjParams {
    pub epsilon: f64,
    pub sigma: f64,
}

impl Default for LjParams {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            sigma: 3.4,
        }
    }
}

/// Default parameters plus overrides for specific (unordered) element pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTable<P> {
    pub default: P,
    pub overrides: Vec<((u32, u32), P)>,
}

impl<P: Copy> PairTable<P> {
    pub fn uniform(p: P) -> Self {
        Self {
            default: p,
            overrides: Vec::new(),
        }
    }

    pub fn get(&self, a: u32, b: u32) -> P {
        let key = (a.min(b), a.max(b));
        self.overrides
            .iter()
            .find(|(k, _)| (k.0.min(k.1), k.0.max(k.1)) == key)
            .map_or(self.default, |(_, p)| *p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    /// eV/Å²
    pub k: f64,
    pub r0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SyntheticPotential {
    Morse(PairTable<MorseParams>),
    LennardJones(PairTable<LjParams>),
    HarmonicNetwork(Vec<Bond>),
}

/// Radial function value with first and second derivative.
struct Radial {
    u: f64,
    du: f64,
    d2u: f64,
}

fn morse(p: MorseParams, r: f64) -> Radial {
    let e = (-p.width * (r - p.r_eq)).exp();
    let a = p.width;
    Radial {
        u: p.depth * ((1.0 - e).powi(2) - 1.0),
        du: 2.0 * p.depth * a * e * (1.0 - e),
        d2u: 2.0 * p.depth * a * a * e * (2.0 * e - 1.0),
    }
}

fn lj(p: LjParams, r: f64) -> Radial {
    let s6 = (p.sigma / r).powi(6);
    let s12 = s6 * s6;
    Radial {
        u: 4.0 * p.epsilon * (s12 - s6),
        du: 4.0 * p.epsilon * (-12.0 * s12 + 6.0 * s6) / r,
        d2u: 4.0 * p.epsilon * (156.0 * s12 - 42.0 * s6) / (r * r),
    }
}

fn harmonic(k: f64, r0: f64, r: f64) -> Radial {
    Radial {
        u: 0.5 * k * (r - r0).powi(2),
        du: k * (r - r0),
        d2u: k,
    }
}

impl SyntheticPotential {
    pub fn morse_default() -> Self {
        Self::Morse(PairTable::uniform(MorseParams::default()))
    }

    /// Springs between every pair closer than `cutoff`, at rest in `positions`.
    pub fn harmonic_network(positions: &[[f64; 3]], k: f64, cutoff: f64) -> Self {
        let mut bonds = Vec::new();
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                let r = crate::system::distance(&positions[i], &positions[j]);
                if r < cutoff {
                    bonds.push(Bond { i, j, k, r0: r });
                }
            }
        }
        Self::HarmonicNetwork(bonds)
    }

    /// Typical nearest-neighbour distance, used to build parent structures.
    pub fn bond_length(&self) -> f64 {
        match self {
            Self::Morse(t) => t.default.r_eq,
            Self::LennardJones(t) => t.default.sigma * 2f64.powf(1.0 / 6.0),
            Self::HarmonicNetwork(b) => b.first().map_or(1.0, |b| b.r0),
        }
    }

    fn for_each_pair(&self, z: &[u32], pos: &[[f64; 3]], mut f: impl FnMut(usize, usize, Radial)) {
        let mut visit = |i: usize, j: usize, rad: &dyn Fn(f64) -> Radial| {
            let r = crate::system::distance(&pos[i], &pos[j]);
            f(i, j, rad(r));
        };
        match self {
            Self::Morse(t) => {
                for i in 0..pos.len() {
                    for j in i + 1..pos.len() {
                        let p = t.get(z[i], z[j]);
                        visit(i, j, &|r| morse(p, r));
                    }
                }
            }
            Self::LennardJones(t) => {
                for i in 0..pos.len() {
                    for j in i + 1..pos.len() {
                        let p = t.get(z[i], z[j]);
                        visit(i, j, &|r| lj(p, r));
                    }
                }
            }
            Self::HarmonicNetwork(bonds) => {
                for b in bonds {
                    visit(b.i, b.j, &|r| harmonic(b.k, b.r0, r));
                }
            }
        }
    }

    pub fn energy(&self, z: &[u32], pos: &[[f64; 3]]) -> f64 {
        let mut e = 0.0;
        self.for_each_pair(z, pos, |_, _, r| e += r.u);
        e
    }

    /// Energy (eV) and forces `-∇E` (eV/Å).
    pub fn energy_forces(&self, z: &[u32], pos: &[[f64; 3]]) -> (f64, Vec<[f64; 3]>) {
        let mut e = 0.0;
        let mut f = vec![[0.0; 3]; pos.len()];
        self.for_each_pair(z, pos, |i, j, rad| {
            e += rad.u;
            let d = sub(pos[j], pos[i]);
            let r = norm(d);
            for c in 0..3 {
                // dE/dr_j = u'(r) d/r
                let g = rad.du * d[c] / r;
                f[j][c] -= g;
                f[i][c] += g;
            }
        });
        (e, f)
    }

    /// Row-major `3N × 3N` Hessian of the energy.
    pub fn hessian(&self, z: &[u32], pos: &[[f64; 3]]) -> Vec<f64> {
        let n3 = pos.len() * 3;
        let mut h = vec![0.0; n3 * n3];
        self.for_each_pair(z, pos, |i, j, rad| {
            let d = sub(pos[j], pos[i]);
            let r = norm(d);
            let u = [d[0] / r, d[1] / r, d[2] / r];
            let mut block = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    block[a][b] = rad.d2u * u[a] * u[b] + rad.du / r * (delta - u[a] * u[b]);
                }
            }
            for a in 0..3 {
                for b in 0..3 {
                    let v = block[a][b];
                    h[(3 * i + a) * n3 + 3 * i + b] += v;
                    h[(3 * j + a) * n3 + 3 * j + b] += v;
                    h[(3 * i + a) * n3 + 3 * j + b] -= v;
                    h[(3 * j + a) * n3 + 3 * i + b] -= v;
                }
            }
        });
        h
    }

    /// Copy of `sys` with forces and energy from this potential.
    pub fn label(&self, sys: &MolecularSystem) -> MolecularSystem {
        let (e, f) = self.energy_forces(&sys.atomic_numbers, &sys.positions);
        let mut out = sys.clone();
        out.forces = Some(f);
        out.energy = Some(e);
        out
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}
