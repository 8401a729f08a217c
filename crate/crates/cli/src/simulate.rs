use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use mdet_core::config::KeyValues;
use mdet_core::diagnostics::trajectory_drift;
use mdet_core::md::{run_md, MdConfig, Thermostat, ThermostatKind};
use serde_json::json;

use crate::context::{flag, structures, switch, Run, Source};

#[derive(Args)]
pub struct SimulateArgs {
    /// Trained model checkpoint.
    #[arg(long, conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Analytic force field: morse, lennard_jones or harmonic.
    #[arg(long)]
    oracle: Option<String>,
    /// Starting structure (first frame of an extended-XYZ file).
    #[arg(long)]
    structure: Option<PathBuf>,
    /// Atoms in the random starting cluster when no structure is given.
    #[arg(long)]
    n_atoms: Option<usize>,
    /// Time step, fs.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Keep every n-th step.
    #[arg(long)]
    stride: Option<usize>,
    /// none, svr or nose_hoover.
    #[arg(long)]
    thermostat: Option<String>,
    /// Microcanonical run; same as `--thermostat none`.
    #[arg(long, conflicts_with = "thermostat")]
    nve: bool,
    /// Thermostat target, K.
    #[arg(long)]
    temperature: Option<f64>,
    /// Thermostat time constant, fs.
    #[arg(long)]
    tau: Option<f64>,
    /// Maxwell-Boltzmann temperature of the initial velocities, K.
    #[arg(long)]
    initial_temperature: Option<f64>,
    /// Remove net force and torque from every evaluation.
    #[arg(long)]
    project: bool,
    /// Evaluate forces in a freshly rotated frame at every step.
    #[arg(long)]
    offset_rotations: bool,
}

impl SimulateArgs {
    pub fn overrides(&self, kv: &mut KeyValues) {
        flag(
            kv,
            "checkpoint",
            self.checkpoint.as_ref().map(|p| p.display()),
        );
        flag(kv, "oracle", self.oracle.as_deref());
        flag(
            kv,
            "structure",
            self.structure.as_ref().map(|p| p.display()),
        );
        flag(kv, "n_atoms", self.n_atoms);
        flag(kv, "dt", self.dt);
        flag(kv, "steps", self.steps);
        flag(kv, "stride", self.stride);
        flag(kv, "thermostat", self.thermostat.as_deref());
        if self.nve {
            kv.set("thermostat", "none");
        }
        flag(kv, "temperature", self.temperature);
        flag(kv, "tau", self.tau);
        flag(kv, "initial_temperature", self.initial_temperature);
        switch(kv, "project", self.project);
        switch(kv, "offset_rotations", self.offset_rotations);
    }
}

fn md_config(run: &mut Run) -> Result<MdConfig> {
    let kv = &mut run.kv;
    let mut cfg = MdConfig {
        seed: run.seed,
        ..MdConfig::default()
    };
    kv.read_into("dt", &mut cfg.dt)?;
    kv.read_into("steps", &mut cfg.steps)?;
    kv.read_into("stride", &mut cfg.stride)?;
    kv.read_into("initial_temperature", &mut cfg.initial_temperature)?;
    kv.read_into("project", &mut cfg.project)?;
    kv.read_into("offset_rotations", &mut cfg.offset_rotations)?;
    kv.read_into("max_distance", &mut cfg.max_distance)?;
    kv.read_into("min_distance", &mut cfg.min_distance)?;
    let kind = kv
        .read::<ThermostatKind>("thermostat")?
        .unwrap_or(ThermostatKind::None);
    let temperature = kv
        .read::<f64>("temperature")?
        .unwrap_or(cfg.initial_temperature);
    let tau = kv.read::<f64>("tau")?.unwrap_or(100.0);
    cfg.thermostat = match kind {
        ThermostatKind::None => Thermostat::none(),
        ThermostatKind::Svr => Thermostat::svr(temperature, tau),
        ThermostatKind::NoseHoover => Thermostat::nose_hoover(temperature, tau),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(run: &mut Run) -> Result<()> {
    let source = Source::read(&mut run.kv)?;
    let cfg = md_config(run)?;
    let mut rng = run.rng(0);
    let system =
        structures(&mut run.kv, "structure", 1, source.bond_length(), &mut rng)?.swap_remove(0);
    run.manifest.config("source", &source);
    run.manifest.config("md", &cfg);
    run.manifest
        .config("thermostat_kind", cfg.thermostat.kind.to_string());
    run.manifest
        .config("offset_rotations", cfg.offset_rotations);
    run.manifest.config("structure", &system);
    run.start()?;

    let provider = source.provider(run.precision, &system)?;
    let traj = run_md(&system, None, provider.as_ref(), &cfg)?;
    run.write("trajectory.xyz", &traj.to_xyz())?;
    run.write("energy.csv", &traj.energy_csv())?;
    run.manifest.result("frames", traj.frames.len());
    run.manifest
        .result("potential_from_work", traj.potential_from_work);
    if let Some(last) = traj.frames.last() {
        run.manifest.result("final_temperature", last.temperature);
        run.manifest.result("final_conserved", last.conserved);
    }
    if let Ok(d) = trajectory_drift(&traj) {
        run.manifest.result("drift_ev_per_ps_per_atom", d.slope);
        run.manifest.result("drift_stderr", d.stderr);
    }
    if let Some(a) = &traj.abort {
        run.manifest.result(
            "abort",
            json!({ "step": a.step, "last_stable_frame": a.last_stable_frame, "reason": a.reason }),
        );
        run.finish("aborted")?;
        traj.check_stable()?;
    }
    run.finish("ok")
}
