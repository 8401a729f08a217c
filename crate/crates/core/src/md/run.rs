//! Velocity-Verlet driver with optional thermostat, force projection and
//! random frame rotations.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::projection::project_forces;
use super::provider::ForceProvider;
use super::thermostat::{
    degrees_of_freedom, kinetic_energy, svr_factor, temperature, NoseHooverState, Thermostat,
    ThermostatKind,
};
use super::units::{KB, MVV2E};
use crate::dataio::xyz::write_frame;
use crate::error::{Error, Result};
use crate::geometry::Rotation;
use crate::system::MolecularSystem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdConfig {
    /// fs
    pub dt: f64,
    pub steps: usize,
    /// Keep every `stride`-th step (plus step 0).
    pub stride: usize,
    pub thermostat: Thermostat,
    /// Initial Maxwell–Boltzmann temperature when no velocities are given, K.
    pub initial_temperature: f64,
    /// Remove net force and torque from every evaluation.
    pub project: bool,
    /// Evaluate as `Rᵀ f̂(R x)` with a fresh uniform `R` each call.
    pub offset_rotations: bool,
    /// Abort when any pair separation exceeds this, Å.
    pub max_distance: f64,
    /// Abort when any pair separation falls below this, Å.
    pub min_distance: f64,
    pub seed: u64,
}

impl Default for MdConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            steps: 1000,
            stride: 10,
            thermostat: Thermostat::none(),
            initial_temperature: 300.0,
            project: false,
            offset_rotations: false,
            max_distance: 100.0,
            min_distance: 0.1,
            seed: 0,
        }
    }
}

impl MdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.initial_temperature < 0.0 {
            return Err(Error::Config(
                "initial temperature must be non-negative".into(),
            ));
        }
        if !(self.min_distance < self.max_distance) {
            return Err(Error::Config(
                "min_distance must be below max_distance".into(),
            ));
        }
        self.thermostat.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub step: usize,
    /// fs
    pub time: f64,
    pub positions: Vec<[f64; 3]>,
    /// Å/fs
    pub velocities: Vec<[f64; 3]>,
    pub forces: Vec<[f64; 3]>,
    pub kinetic: f64,
    pub potential: f64,
    pub temperature: f64,
    /// Total energy plus whatever the thermostat has absorbed.
    pub conserved: f64,
}

impl Frame {
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub step: usize,
    /// Index into `Trajectory::frames`.
    pub last_stable_frame: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub atomic_numbers: Vec<u32>,
    pub masses: Vec<f64>,
    pub dt: f64,
    pub stride: usize,
    pub ndof: usize,
    pub thermostat: Thermostat,
    /// True when the provider has no energy and `potential` is the
    /// accumulated work `−∫ f·dx` from the first frame.
    pub potential_from_work: bool,
    pub frames: Vec<Frame>,
    pub abort: Option<Abort>,
}

impl Trajectory {
    /// Spacing between stored frames, fs.
    pub fn frame_interval(&self) -> f64 {
        self.dt * self.stride as f64
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.time).collect()
    }

    pub fn conserved(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.conserved).collect()
    }

    /// Turn a recorded abort into `Error::Unstable`.
    pub fn check_stable(&self) -> Result<()> {
        match &self.abort {
            None => Ok(()),
            Some(a) => Err(Error::Unstable {
                step: a.step,
                last_stable_frame: a.last_stable_frame,
                reason: a.reason.clone(),
            }),
        }
    }

    pub fn energy_csv(&self) -> String {
        let mut s = String::from("time,E_kin,E_pot,E_total,T,conserved\n");
        for f in &self.frames {
            let _ = writeln!(
                s,
                "{},{:.12e},{:.12e},{:.12e},{:.6},{:.12e}",
                f.time,
                f.kinetic,
                f.potential,
                f.total(),
                f.temperature,
                f.conserved
            );
        }
        s
    }

    pub fn to_xyz(&self) -> String {
        let mut s = String::new();
        for f in &self.frames {
            write_frame(
                &mut s,
                &self.atomic_numbers,
                &f.positions,
                &f.velocities,
                &f.forces,
                f.time,
            );
        }
        s
    }
}

/// Velocities at `temperature` with centre-of-mass motion removed (for two or
/// more atoms).
pub fn maxwell_boltzmann<R: Rng + ?Sized>(
    masses: &[f64],
    temperature: f64,
    rng: &mut R,
) -> Vec<[f64; 3]> {
    let mut v: Vec<[f64; 3]> = masses
        .iter()
        .map(|&m| {
            let s = (KB * temperature / (m * MVV2E)).sqrt();
            [0; 3].map(|_| s * rng.sample::<f64, _>(StandardNormal))
        })
        .collect();
    if masses.len() > 1 {
        remove_com_velocity(&mut v, masses);
    }
    v
}

pub fn remove_com_velocity(v: &mut [[f64; 3]], masses: &[f64]) {
    let total: f64 = masses.iter().sum();
    let mut p = [0.0; 3];
    for (vi, &m) in v.iter().zip(masses) {
        for c in 0..3 {
            p[c] += m * vi[c];
        }
    }
    for vi in v.iter_mut() {
        for c in 0..3 {
            vi[c] -= p[c] / total;
        }
    }
}

/// Stateful integrator. `run_md` drives one of these; tests can also step it
/// by hand.
pub struct MdEngine<'a> {
    provider: &'a dyn ForceProvider,
    cfg: MdConfig,
    template: MolecularSystem,
    masses: Vec<f64>,
    ndof: usize,
    pub positions: Vec<[f64; 3]>,
    pub velocities: Vec<[f64; 3]>,
    pub forces: Vec<[f64; 3]>,
    potential: f64,
    from_work: bool,
    pub step: usize,
    pub nose_hoover: NoseHooverState,
    /// Kinetic energy injected by the stochastic thermostat, eV.
    thermostat_work: f64,
    thermo_rng: ChaCha8Rng,
    rotation_rng: ChaCha8Rng,
}

impl<'a> MdEngine<'a> {
    pub fn new(
        system: &MolecularSystem,
        velocities: Option<Vec<[f64; 3]>>,
        provider: &'a dyn ForceProvider,
        cfg: MdConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        system.validate()?;
        let masses = system.masses()?;
        let n = system.n_atoms();
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let velocities = match velocities {
            Some(v) if v.len() == n => v,
            Some(v) => {
                return Err(Error::Invalid(format!(
                    "{} velocity rows for {} atoms",
                    v.len(),
                    n
                )));
            }
            None => maxwell_boltzmann(&masses, cfg.initial_temperature, &mut init_rng),
        };
        let mut thermo_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        thermo_rng.set_stream(1);
        let mut rotation_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rotation_rng.set_stream(2);
        let ndof = degrees_of_freedom(n);
        let nose_hoover =
            NoseHooverState::new(ndof, cfg.thermostat.temperature, cfg.thermostat.tau);
        let mut engine = Self {
            provider,
            template: system.clone(),
            masses,
            ndof,
            positions: system.positions.clone(),
            velocities,
            forces: vec![[0.0; 3]; n],
            potential: 0.0,
            from_work: false,
            step: 0,
            nose_hoover,
            thermostat_work: 0.0,
            thermo_rng,
            rotation_rng,
            cfg,
        };
        let (f, e) = engine.evaluate(&engine.positions.clone())?;
        engine.forces = f;
        engine.from_work = e.is_none();
        engine.potential = e.unwrap_or(0.0);
        Ok(engine)
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn ndof(&self) -> usize {
        self.ndof
    }

    pub fn config(&self) -> &MdConfig {
        &self.cfg
    }

    pub fn potential_from_work(&self) -> bool {
        self.from_work
    }

    /// Forces (after rotation averaging and projection) and provider energy.
    pub fn evaluate(&mut self, positions: &[[f64; 3]]) -> Result<(Vec<[f64; 3]>, Option<f64>)> {
        let mut sys = self.template.clone();
        sys.forces = None;
        sys.energy = None;
        let rotation = if self.cfg.offset_rotations {
            Some(Rotation::uniform(&mut self.rotation_rng))
        } else {
            None
        };
        sys.positions = match &rotation {
            Some(r) => r.apply_all(positions),
            None => positions.to_vec(),
        };
        let ev = self.provider.evaluate(&sys)?;
        if ev.forces.len() != positions.len() {
            return Err(Error::Invalid(format!(
                "provider returned {} force rows for {} atoms",
                ev.forces.len(),
                positions.len()
            )));
        }
        let mut f = match &rotation {
            Some(r) => r.apply_inverse_all(&ev.forces),
            None => ev.forces,
        };
        if self.cfg.project {
            f = project_forces(&f, positions, &self.masses);
        }
        Ok((f, ev.energy))
    }

    pub fn kinetic(&self) -> f64 {
        kinetic_energy(&self.velocities, &self.masses)
    }

    pub fn conserved(&self) -> f64 {
        let base = self.kinetic() + self.potential;
        match self.cfg.thermostat.kind {
            ThermostatKind::None => base,
            ThermostatKind::Svr => base - self.thermostat_work,
            ThermostatKind::NoseHoover => {
                base + self
                    .nose_hoover
                    .energy(self.ndof, self.cfg.thermostat.temperature)
            }
        }
    }

    pub fn frame(&self) -> Frame {
        let k = self.kinetic();
        Frame {
            step: self.step,
            time: self.step as f64 * self.cfg.dt,
            positions: self.positions.clone(),
            velocities: self.velocities.clone(),
            forces: self.forces.clone(),
            kinetic: k,
            potential: self.potential,
            temperature: temperature(k, self.ndof),
            conserved: self.conserved(),
        }
    }

    /// Flip every velocity (and the thermostat friction) for time-reversal
    /// checks.
    pub fn reverse(&mut self) {
        for v in &mut self.velocities {
            for c in v.iter_mut() {
                *c = -*c;
            }
        }
        self.nose_hoover.xi = -self.nose_hoover.xi;
    }

    fn kick(&mut self, h: f64) {
        for ((v, f), &m) in self
            .velocities
            .iter_mut()
            .zip(&self.forces)
            .zip(&self.masses)
        {
            let s = h / (m * MVV2E);
            for c in 0..3 {
                v[c] += s * f[c];
            }
        }
    }

    /// Advance one `dt`.
    pub fn advance(&mut self) -> Result<()> {
        let dt = self.cfg.dt;
        let th = self.cfg.thermostat;
        if th.kind == ThermostatKind::NoseHoover {
            self.nose_hoover.half_step(
                &mut self.velocities,
                &self.masses,
                self.ndof,
                th.temperature,
                0.5 * dt,
            );
        }
        self.kick(0.5 * dt);
        let old = std::mem::take(&mut self.positions);
        self.positions = old
            .iter()
            .zip(&self.velocities)
            .map(|(x, v)| [x[0] + dt * v[0], x[1] + dt * v[1], x[2] + dt * v[2]])
            .collect();
        let (f, e) = self.evaluate(&self.positions.clone())?;
        if self.from_work {
            let mut w = 0.0;
            for (((a, b), x0), x1) in self.forces.iter().zip(&f).zip(&old).zip(&self.positions) {
                for c in 0..3 {
                    w += 0.5 * (a[c] + b[c]) * (x1[c] - x0[c]);
                }
            }
            self.potential -= w;
        } else {
            self.potential = e.unwrap_or(f64::NAN);
        }
        self.forces = f;
        self.kick(0.5 * dt);
        match th.kind {
            ThermostatKind::None => {}
            ThermostatKind::NoseHoover => {
                self.nose_hoover.half_step(
                    &mut self.velocities,
                    &self.masses,
                    self.ndof,
                    th.temperature,
                    0.5 * dt,
                );
            }
            ThermostatKind::Svr => {
                let k = self.kinetic();
                let a = svr_factor(
                    k,
                    th.temperature,
                    self.ndof,
                    dt,
                    th.tau,
                    &mut self.thermo_rng,
                );
                for v in &mut self.velocities {
                    for c in v.iter_mut() {
                        *c *= a;
                    }
                }
                self.thermostat_work += (a * a - 1.0) * k;
            }
        }
        self.step += 1;
        Ok(())
    }

    /// Why the current geometry is unusable, if it is.
    pub fn instability(&self) -> Option<String> {
        if self
            .positions
            .iter()
            .flatten()
            .chain(self.velocities.iter().flatten())
            .any(|x| !x.is_finite())
        {
            return Some("non-finite positions or velocities".into());
        }
        if self.forces.iter().flatten().any(|x| !x.is_finite()) {
            return Some("non-finite forces".into());
        }
        let n = self.positions.len();
        for i in 0..n {
            for j in i + 1..n {
                let d = crate::system::distance(&self.positions[i], &self.positions[j]);
                if d > self.cfg.max_distance {
                    return Some(format!("atoms {i} and {j} separated by {d:.3} Å"));
                }
                if d < self.cfg.min_distance {
                    return Some(format!("atoms {i} and {j} within {d:.4} Å"));
                }
            }
        }
        None
    }
}

/// Integrate `cfg.steps` steps. Instability ends the run early and is
/// reported in `Trajectory::abort`; provider failures are errors.
pub fn run_md(
    system: &MolecularSystem,
    velocities: Option<Vec<[f64; 3]>>,
    provider: &dyn ForceProvider,
    cfg: &MdConfig,
) -> Result<Trajectory> {
    let mut engine = MdEngine::new(system, velocities, provider, cfg.clone())?;
    let mut frames = vec![engine.frame()];
    let mut abort = None;
    for _ in 0..cfg.steps {
        let failed = match engine.advance() {
            Ok(()) => engine.instability(),
            Err(e @ (Error::NonFinite { .. } | Error::NonFiniteAttention { .. })) => {
                Some(e.to_string())
            }
            Err(e) => return Err(e),
        };
        if let Some(reason) = failed {
            abort = Some(Abort {
                step: engine.step.max(1),
                last_stable_frame: frames.len() - 1,
                reason,
            });
            break;
        }
        if engine.step % cfg.stride == 0 {
            frames.push(engine.frame());
        }
    }
    Ok(Trajectory {
        atomic_numbers: system.atomic_numbers.clone(),
        masses: engine.masses.clone(),
        dt: cfg.dt,
        stride: cfg.stride,
        ndof: engine.ndof,
        thermostat: cfg.thermostat,
        potential_from_work: engine.from_work,
        frames,
        abort,
    })
}
