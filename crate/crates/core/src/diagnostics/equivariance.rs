//! Rotational equivariance error and per-rotation force records.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{norm, Rotation};
use crate::md::ForceProvider;
use crate::system::MolecularSystem;

/// Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            stderr,
            samples: n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceOptions {
    /// Rotations used for the mean back-rotated prediction.
    pub n_inner: usize,
    /// Fresh rotations compared against that mean, per system.
    pub n_outer: usize,
}

impl Default for EquivarianceOptions {
    fn default() -> Self {
        Self {
            n_inner: 64,
            n_outer: 16,
        }
    }
}

/// `Rᵀ f̂(R x)`.
pub fn back_rotated_forces(
    provider: &dyn ForceProvider,
    sys: &MolecularSystem,
    r: &Rotation,
) -> Result<Vec<[f64; 3]>> {
    let mut rotated = sys.clone();
    rotated.positions = r.apply_all(&sys.positions);
    rotated.forces = None;
    let ev = provider.evaluate(&rotated)?;
    Ok(r.apply_inverse_all(&ev.forces))
}

fn system_samples(
    provider: &dyn ForceProvider,
    sys: &MolecularSystem,
    opts: EquivarianceOptions,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sys.n_atoms();
    let mut mean = vec![[0.0; 3]; n];
    for _ in 0..opts.n_inner {
        let f = back_rotated_forces(provider, sys, &Rotation::uniform(&mut rng))?;
        for (m, fi) in mean.iter_mut().zip(&f) {
            for c in 0..3 {
                m[c] += fi[c] / opts.n_inner as f64;
            }
        }
    }
    let mut out = Vec::with_capacity(opts.n_outer);
    for _ in 0..opts.n_outer {
        let f = back_rotated_forces(provider, sys, &Rotation::uniform(&mut rng))?;
        let per_atom: f64 = f
            .iter()
            .zip(&mean)
            .map(|(a, b)| norm([a[0] - b[0], a[1] - b[1], a[2] - b[2]]))
            .sum::<f64>()
            / n as f64;
        out.push(per_atom);
    }
    Ok(out)
}

/// `E‖Sᵀ f̂(Sx) − E_R[Rᵀ f̂(Rx)]‖`, averaged over atoms then systems (eV/Å).
/// Systems are processed in parallel with seeds drawn up front, so the result
/// does not depend on the thread count.
pub fn equivariance_error<R: Rng + ?Sized>(
    provider: &dyn ForceProvider,
    systems: &[MolecularSystem],
    opts: EquivarianceOptions,
    rng: &mut R,
) -> Result<Estimate> {
    if opts.n_inner < 2 {
        return Err(Error::Invalid(format!(
            "n_inner must be at least 2, got {}",
            opts.n_inner
        )));
    }
    if opts.n_outer < 1 || systems.is_empty() {
        return Err(Error::Invalid(
            "need at least one system and one outer rotation".into(),
        ));
    }
    let seeds: Vec<u64> = systems.iter().map(|_| rng.random()).collect();
    let per_system: Vec<Vec<f64>> = systems
        .par_iter()
        .zip(seeds)
        .enumerate()
        .map(|(index, (sys, seed))| {
            system_samples(provider, sys, opts, seed).map_err(|e| Error::Provider {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let system_means: Vec<f64> = per_system
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    let all: Vec<f64> = per_system.into_iter().flatten().collect();
    let pooled = Estimate::from_samples(&all);
    Ok(Estimate {
        mean: system_means.iter().sum::<f64>() / system_means.len() as f64,
        ..pooled
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub rotation: usize,
    pub quaternion: [f64; 4],
    pub atom: usize,
    /// `f̂(R x)` as predicted in the rotated frame.
    pub raw: [f64; 3],
    /// `Rᵀ f̂(R x)`
    pub force: [f64; 3],
    pub magnitude: f64,
    /// `magnitude / median(magnitude)` over the rotation set.
    pub ratio: f64,
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn fill_ratios(records: &mut [GridRecord]) {
    let m = median(&records.iter().map(|r| r.magnitude).collect::<Vec<_>>());
    for r in records {
        r.ratio = if m > 0.0 { r.magnitude / m } else { 1.0 };
    }
}

/// One record per rotation for atom `atom`.
pub fn rotation_grid_forces(
    provider: &dyn ForceProvider,
    sys: &MolecularSystem,
    atom: usize,
    rotations: &[Rotation],
) -> Result<Vec<GridRecord>> {
    if atom >= sys.n_atoms() {
        return Err(Error::Invalid(format!(
            "atom {atom} out of range for {} atoms",
            sys.n_atoms()
        )));
    }
    let mut records = rotations
        .par_iter()
        .enumerate()
        .map(|(k, r)| {
            let mut rotated = sys.clone();
            rotated.positions = r.apply_all(&sys.positions);
            rotated.forces = None;
            let raw = provider.evaluate(&rotated)?.forces[atom];
            let force = r.apply_inverse(raw);
            Ok(GridRecord {
                rotation: k,
                quaternion: r.quaternion(),
                atom,
                raw,
                force,
                magnitude: norm(force),
                ratio: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fill_ratios(&mut records);
    Ok(records)
}

/// Records for a perfectly equivariant reference whose force on the atom is
/// `f0` in the unrotated frame: `raw = R f0`.
pub fn reference_grid(f0: [f64; 3], rotations: &[Rotation]) -> Vec<GridRecord> {
    let mut records: Vec<GridRecord> = rotations
        .iter()
        .enumerate()
        .map(|(k, r)| GridRecord {
            rotation: k,
            quaternion: r.quaternion(),
            atom: 0,
            raw: r.apply(f0),
            force: f0,
            magnitude: norm(f0),
            ratio: 0.0,
        })
        .collect();
    fill_ratios(&mut records);
    records
}

/// Gaussian kernel density of the magnitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Density {
    /// Zero spread: every sample equal.
    PointMass(f64),
    Smooth {
        bandwidth: f64,
        grid: Vec<f64>,
        density: Vec<f64>,
    },
}

/// Silverman bandwidth `0.9 · min(σ, IQR/1.34) · n^(−1/5)`.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let q = quartiles(xs);
    let iqr = q[2] - q[0];
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Linear-interpolated 25th, 50th and 75th percentiles.
pub fn quartiles(xs: &[f64]) -> [f64; 3] {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let at = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
    };
    [at(0.25), at(0.5), at(0.75)]
}

pub fn kernel_density(xs: &[f64], points: usize) -> Result<Density> {
    if xs.is_empty() {
        return Err(Error::Invalid("kernel density of an empty sample".into()));
    }
    let h = silverman_bandwidth(xs);
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(h > 1e-12 * hi.abs().max(1.0)) {
        return Ok(Density::PointMass(xs.iter().sum::<f64>() / xs.len() as f64));
    }
    let points = points.max(2);
    let (a, b) = (lo - 3.0 * h, hi + 3.0 * h);
    let grid: Vec<f64> = (0..points)
        .map(|k| a + (b - a) * k as f64 / (points - 1) as f64)
        .collect();
    let norm = 1.0 / (xs.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|&g| {
            norm * xs
                .iter()
                .map(|x| (-0.5 * ((g - x) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    Ok(Density::Smooth {
        bandwidth: h,
        grid,
        density,
    })
}
