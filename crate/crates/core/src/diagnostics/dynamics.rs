//! Trajectory-level observables: energy drift, vibrational spectra and the
//! interatomic distance distribution.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::md::units::per_fs_to_wavenumber;
use crate::md::Trajectory;
use crate::system::distance;

/// Linear fit of total energy per atom against time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    /// eV/ps/atom
    pub slope: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    pub intercept: f64,
}

/// `times` in fs, `energies` in eV.
pub fn energy_drift(times: &[f64], energies: &[f64], n_atoms: usize) -> Result<Drift> {
    if times.len() != energies.len() {
        return Err(Error::Invalid("times and energies differ in length".into()));
    }
    if times.len() < 10 {
        return Err(Error::Invalid(format!(
            "energy drift needs at least 10 frames, got {}",
            times.len()
        )));
    }
    if n_atoms == 0 {
        return Err(Error::Invalid(
            "energy drift needs a positive atom count".into(),
        ));
    }
    let x: Vec<f64> = times.iter().map(|t| t / 1000.0).collect();
    let y: Vec<f64> = energies.iter().map(|e| e / n_atoms as f64).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("energy drift needs distinct times".into()));
    }
    // centring y on its first value keeps a constant series exactly flat
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - y[0])).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    Ok(Drift {
        slope,
        stderr: (rss / (n - 2.0) / sxx).sqrt(),
        intercept,
    })
}

/// Drift of the run's conserved quantity.
pub fn trajectory_drift(traj: &Trajectory) -> Result<Drift> {
    energy_drift(&traj.times(), &traj.conserved(), traj.atomic_numbers.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    Hann,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// cm⁻¹
    pub wavenumber: Vec<f64>,
    pub power: Vec<f64>,
    /// cm⁻¹
    pub bin_width: f64,
    /// Mass-weighted autocorrelation, amu·Å²/fs², by lag.
    pub vacf: Vec<f64>,
}

impl Spectrum {
    pub fn peak(&self) -> Option<(f64, f64)> {
        self.power
            .iter()
            .enumerate()
            .skip(1)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, &p)| (self.wavenumber[k], p))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("wavenumber_cm-1,power\n");
        for (w, p) in self.wavenumber.iter().zip(&self.power) {
            let _ = writeln!(s, "{w:.6},{p:.12e}");
        }
        s
    }
}

fn check_uniform(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::Invalid("spectrum needs at least two frames".into()));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::Invalid("frame times must increase".into()));
    }
    for (k, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::Invalid(format!(
                "non-uniform frame stride at frame {}: {} fs vs {} fs",
                k + 1,
                w[1] - w[0],
                dt
            )));
        }
    }
    Ok(dt)
}

/// Power spectrum of the mass-weighted velocity autocorrelation.
///
/// `C(τ) = (1/N) Σ_i m_i ⟨v_i(t)·v_i(t+τ)⟩_t` up to `max_lag` (default: all
/// lags), windowed, mirrored and Fourier transformed. Bin width is
/// `1 / (2 M Δt)` with `M = max_lag + 1`.
pub fn vacf_spectrum(
    times: &[f64],
    velocities: &[Vec<[f64; 3]>],
    masses: &[f64],
    window: Window,
    max_lag: Option<usize>,
) -> Result<Spectrum> {
    if times.len() != velocities.len() {
        return Err(Error::Invalid(
            "frame times and velocity frames differ in length".into(),
        ));
    }
    let dt = check_uniform(times)?;
    let t = times.len();
    let m = max_lag.map_or(t, |l| (l + 1).min(t));
    let n_atoms = masses.len();
    if velocities.iter().any(|v| v.len() != n_atoms) {
        return Err(Error::Invalid(
            "velocity frame size does not match masses".into(),
        ));
    }

    let len = (2 * t).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut acf = vec![0.0; m];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for (i, &mass) in masses.iter().enumerate() {
        for c in 0..3 {
            buf.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
            for (k, frame) in velocities.iter().enumerate() {
                buf[k].re = frame[i][c];
            }
            fwd.process(&mut buf);
            buf.iter_mut()
                .for_each(|z| *z = Complex::new(z.norm_sqr(), 0.0));
            inv.process(&mut buf);
            for (lag, a) in acf.iter_mut().enumerate() {
                *a += mass * buf[lag].re / (len as f64 * (t - lag) as f64);
            }
        }
    }
    acf.iter_mut().for_each(|a| *a /= n_atoms as f64);

    let flen = 2 * m;
    let mut s = vec![Complex::new(0.0, 0.0); flen];
    for lag in 0..m {
        let w = match window {
            Window::Rectangular => 1.0,
            Window::Hann => 0.5 * (1.0 + (std::f64::consts::PI * lag as f64 / m as f64).cos()),
        };
        s[lag].re = w * acf[lag];
        if lag > 0 {
            s[flen - lag].re = w * acf[lag];
        }
    }
    planner.plan_fft_forward(flen).process(&mut s);
    let bin = 1.0 / (flen as f64 * dt);
    let power: Vec<f64> = s[..=m].iter().map(|z| z.re * dt).collect();
    Ok(Spectrum {
        wavenumber: (0..=m)
            .map(|k| per_fs_to_wavenumber(k as f64 * bin))
            .collect(),
        power,
        bin_width: per_fs_to_wavenumber(bin),
        vacf: acf,
    })
}

pub fn trajectory_spectrum(
    traj: &Trajectory,
    window: Window,
    max_lag: Option<usize>,
) -> Result<Spectrum> {
    let v: Vec<Vec<[f64; 3]>> = traj.frames.iter().map(|f| f.velocities.clone()).collect();
    vacf_spectrum(&traj.times(), &v, &traj.masses, window, max_lag)
}

/// Distribution of interatomic distances, normalised to unit mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    /// Å
    pub bin_width: f64,
    /// Probability per bin; bin `k` covers `[k·w, (k+1)·w)`.
    pub mass: Vec<f64>,
}

impl DistanceHistogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r_lo_A,r_hi_A,mass\n");
        for (k, m) in self.mass.iter().enumerate() {
            let lo = k as f64 * self.bin_width;
            let _ = writeln!(s, "{lo:.6},{:.6},{m:.12e}", lo + self.bin_width);
        }
        s
    }
}

pub fn h_r_histogram(frames: &[Vec<[f64; 3]>], bin_width: f64) -> Result<DistanceHistogram> {
    if !(bin_width > 0.0) {
        return Err(Error::Invalid(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    let mut counts: Vec<f64> = Vec::new();
    let mut total = 0.0;
    for f in frames {
        for i in 0..f.len() {
            for j in i + 1..f.len() {
                let r = distance(&f[i], &f[j]);
                if !r.is_finite() {
                    return Err(Error::non_finite("h(r) input"));
                }
                let k = (r / bin_width).floor() as usize;
                if k >= counts.len() {
                    counts.resize(k + 1, 0.0);
                }
                counts[k] += 1.0;
                total += 1.0;
            }
        }
    }
    if total == 0.0 {
        return Err(Error::Invalid("h(r) needs at least one atom pair".into()));
    }
    Ok(DistanceHistogram {
        bin_width,
        mass: counts.into_iter().map(|c| c / total).collect(),
    })
}

/// Mean absolute difference over the union of bins.
pub fn h_r_score(a: &DistanceHistogram, b: &DistanceHistogram) -> Result<f64> {
    if (a.bin_width - b.bin_width).abs() > 1e-12 * a.bin_width {
        return Err(Error::Invalid("histograms use different bin widths".into()));
    }
    let n = a.mass.len().max(b.mass.len());
    let at = |h: &DistanceHistogram, k: usize| h.mass.get(k).copied().unwrap_or(0.0);
    Ok((0..n).map(|k| (at(a, k) - at(b, k)).abs()).sum::<f64>() / n as f64)
}
