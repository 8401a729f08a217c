//! Stochastic velocity rescaling and Nosé–Hoover chains of length one.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::units::{KB, MVV2E};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermostatKind {
    None,
    Svr,
    NoseHoover,
}

impl fmt::Display for ThermostatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThermostatKind::None => "none",
            ThermostatKind::Svr => "svr",
            ThermostatKind::NoseHoover => "nose_hoover",
        })
    }
}

impl FromStr for ThermostatKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "nve" => Ok(ThermostatKind::None),
            "svr" | "bussi" => Ok(ThermostatKind::Svr),
            "nose_hoover" | "nose-hoover" | "nh" => Ok(ThermostatKind::NoseHoover),
            other => Err(Error::Config(format!("unknown thermostat '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thermostat {
    pub kind: ThermostatKind,
    /// K
    pub temperature: f64,
    /// fs
    pub tau: f64,
}

impl Thermostat {
    pub fn none() -> Self {
        Self {
            kind: ThermostatKind::None,
            temperature: 0.0,
            tau: f64::INFINITY,
        }
    }

    pub fn svr(temperature: f64, tau: f64) -> Self {
        Self {
            kind: ThermostatKind::Svr,
            temperature,
            tau,
        }
    }

    pub fn nose_hoover(temperature: f64, tau: f64) -> Self {
        Self {
            kind: ThermostatKind::NoseHoover,
            temperature,
            tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ThermostatKind::None {
            return Ok(());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "thermostat temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "thermostat tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// `½ Σ m v²` in eV, velocities in Å/fs.
pub fn kinetic_energy(velocities: &[[f64; 3]], masses: &[f64]) -> f64 {
    0.5 * MVV2E
        * velocities
            .iter()
            .zip(masses)
            .map(|(v, m)| m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
            .sum::<f64>()
}

/// `3N − 3` once centre-of-mass motion is removed; a lone atom keeps all three.
pub fn degrees_of_freedom(n_atoms: usize) -> usize {
    if n_atoms <= 1 {
        3 * n_atoms
    } else {
        3 * n_atoms - 3
    }
}

pub fn temperature(kinetic: f64, ndof: usize) -> f64 {
    if ndof == 0 {
        0.0
    } else {
        2.0 * kinetic / (ndof as f64 * KB)
    }
}

/// Bussi–Donadio–Parrinello rescaling factor `α` (positive root) for one
/// interval `dt`. An infinite `tau` returns exactly 1.
pub fn svr_factor<R: Rng + ?Sized>(
    kinetic: f64,
    target_temperature: f64,
    ndof: usize,
    dt: f64,
    tau: f64,
    rng: &mut R,
) -> f64 {
    if kinetic <= 0.0 || ndof == 0 {
        return 1.0;
    }
    let c = (-dt / tau).exp();
    if c == 1.0 {
        return 1.0;
    }
    let nf = ndof as f64;
    let sigma = 0.5 * nf * KB * target_temperature;
    let r1: f64 = StandardNormal.sample(rng);
    let rest = if ndof > 1 {
        ChiSquared::new(nf - 1.0).expect("positive dof").sample(rng)
    } else {
        0.0
    };
    let new = kinetic
        + (1.0 - c) * (sigma * (rest + r1 * r1) / nf - kinetic)
        + 2.0 * r1 * (kinetic * sigma / nf * (1.0 - c) * c).sqrt();
    (new.max(0.0) / kinetic).sqrt()
}

/// Scalar friction state of a single Nosé–Hoover thermostat.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoseHooverState {
    /// 1/fs
    pub xi: f64,
    /// dimensionless
    pub eta: f64,
    /// eV·fs²
    pub q: f64,
}

impl NoseHooverState {
    pub fn new(ndof: usize, temperature: f64, tau: f64) -> Self {
        Self {
            xi: 0.0,
            eta: 0.0,
            q: ndof as f64 * KB * temperature * tau * tau,
        }
    }

    /// Trotter half-step of length `h`: friction update, velocity scaling,
    /// friction update.
    pub fn half_step(
        &mut self,
        velocities: &mut [[f64; 3]],
        masses: &[f64],
        ndof: usize,
        temperature: f64,
        h: f64,
    ) {
        let nkt = ndof as f64 * KB * temperature;
        let g = |k: f64, q: f64| (2.0 * k - nkt) / q;
        let k = kinetic_energy(velocities, masses);
        self.xi += 0.5 * h * g(k, self.q);
        let s = (-self.xi * h).exp();
        for v in velocities.iter_mut() {
            for c in v.iter_mut() {
                *c *= s;
            }
        }
        self.eta += self.xi * h;
        let k = k * s * s;
        self.xi += 0.5 * h * g(k, self.q);
    }

    /// Energy stored in the thermostat, eV.
    pub fn energy(&self, ndof: usize, temperature: f64) -> f64 {
        0.5 * self.q * self.xi * self.xi + ndof as f64 * KB * temperature * self.eta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn infinite_tau_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_eq!(svr_factor(1.0, 300.0, 9, 0.5, f64::INFINITY, &mut rng), 1.0);
    }

    #[test]
    fn kind_round_trips_through_text() {
        for k in [
            ThermostatKind::None,
            ThermostatKind::Svr,
            ThermostatKind::NoseHoover,
        ] {
            assert_eq!(k.to_string().parse::<ThermostatKind>().unwrap(), k);
        }
        assert!("langevin".parse::<ThermostatKind>().is_err());
    }
}
