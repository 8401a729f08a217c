use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use mdet_core::config::KeyValues;
use mdet_core::diagnostics::{
    antisymmetric_ratio, equivariance_error, position_jacobian, rotation_grid_forces,
    sample_rotations_600cell, EquivarianceOptions, Estimate, JacobianMode, Record, Report,
};
use mdet_core::Error;
use rand_distr::{Distribution, StandardNormal};

use crate::context::{flag, structures, Run, Source};

#[derive(Args)]
pub struct AuditArgs {
    #[arg(long, conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Analytic force field: morse, lennard_jones or harmonic.
    #[arg(long)]
    oracle: Option<String>,
    /// Systems to audit (extended XYZ); random clusters otherwise.
    #[arg(long)]
    structures: Option<PathBuf>,
    /// Random clusters to audit when no file is given.
    #[arg(long)]
    n_systems: Option<usize>,
    #[arg(long)]
    n_atoms: Option<usize>,
    /// Rotations averaged for the mean back-rotated prediction.
    #[arg(long)]
    n_inner: Option<usize>,
    /// Fresh rotations compared against that mean, per system.
    #[arg(long)]
    n_outer: Option<usize>,
    /// 600-cell rotation grid for the first system: 0 (off), 60 or 360.
    #[arg(long)]
    grid: Option<usize>,
    /// autodiff or fd.
    #[arg(long)]
    jacobian: Option<String>,
    /// Draws of iid Gaussian matrices for the λ reference level.
    #[arg(long)]
    lambda_draws: Option<usize>,
    /// Side length of those matrices.
    #[arg(long)]
    lambda_size: Option<usize>,
}

impl AuditArgs {
    pub fn overrides(&self, kv: &mut KeyValues) {
        flag(
            kv,
            "checkpoint",
            self.checkpoint.as_ref().map(|p| p.display()),
        );
        flag(kv, "oracle", self.oracle.as_deref());
        flag(
            kv,
            "structures",
            self.structures.as_ref().map(|p| p.display()),
        );
        flag(kv, "n_systems", self.n_systems);
        flag(kv, "n_atoms", self.n_atoms);
        flag(kv, "n_inner", self.n_inner);
        flag(kv, "n_outer", self.n_outer);
        flag(kv, "grid", self.grid);
        flag(kv, "jacobian", self.jacobian.as_deref());
        flag(kv, "lambda_draws", self.lambda_draws);
        flag(kv, "lambda_size", self.lambda_size);
    }
}

fn jacobian_mode(kv: &mut KeyValues) -> Result<JacobianMode> {
    let name = kv
        .read::<String>("jacobian")?
        .unwrap_or_else(|| "autodiff".into());
    let h = kv.read::<f64>("fd_step")?;
    Ok(match name.as_str() {
        "autodiff" => JacobianMode::Autodiff,
        "fd" | "finite_difference" => match h {
            Some(h) => JacobianMode::FiniteDifference { h },
            None => JacobianMode::finite_difference(),
        },
        other => bail!(Error::Config(format!("unknown jacobian mode `{other}`"))),
    })
}

pub fn run(run: &mut Run) -> Result<()> {
    let source = Source::read(&mut run.kv)?;
    let n_systems = run.kv.read::<usize>("n_systems")?.unwrap_or(4);
    let mut opts = EquivarianceOptions::default();
    run.kv.read_into("n_inner", &mut opts.n_inner)?;
    run.kv.read_into("n_outer", &mut opts.n_outer)?;
    let grid = run.kv.read::<usize>("grid")?.unwrap_or(60);
    let mode = jacobian_mode(&mut run.kv)?;
    let lambda_draws = run.kv.read::<usize>("lambda_draws")?.unwrap_or(0);
    let lambda_size = run.kv.read::<usize>("lambda_size")?.unwrap_or(60);
    let rotations = match grid {
        0 => Vec::new(),
        g => sample_rotations_600cell(g)?,
    };
    let mut rng = run.rng(0);
    let systems = structures(
        &mut run.kv,
        "structures",
        n_systems,
        source.bond_length(),
        &mut rng,
    )?;
    run.manifest.config("source", &source);
    run.manifest.config("equivariance", opts);
    run.manifest.config("grid", grid);
    run.manifest.config("jacobian", mode);
    run.manifest.config("lambda_draws", lambda_draws);
    run.manifest.config("lambda_size", lambda_size);
    run.manifest.config("systems", &systems);
    run.start()?;

    let provider = source.provider(run.precision, &systems[0])?;
    let mut report = Report::default();

    let e_eq = equivariance_error(provider.as_ref(), &systems, opts, &mut run.rng(1))?;
    report.push(
        Record::new("e_eq", e_eq.mean, "eV/Å")
            .stderr(e_eq.stderr)
            .with("samples", e_eq.samples)
            .with("n_inner", opts.n_inner),
    );
    run.manifest.result("e_eq", e_eq.mean);

    let mut lambdas = Vec::with_capacity(systems.len());
    for (k, sys) in systems.iter().enumerate() {
        let j = position_jacobian(provider.as_ref(), sys, mode)?;
        let l = antisymmetric_ratio(&j, 3 * sys.n_atoms())?;
        report.push(Record::new("lambda_system", l, "1").with("system", k));
        lambdas.push(l);
    }
    let lam = Estimate::from_samples(&lambdas);
    report.push(
        Record::new("lambda", lam.mean, "1")
            .stderr(lam.stderr)
            .with("samples", lam.samples),
    );
    run.manifest.result("lambda", lam.mean);

    if lambda_draws > 0 {
        if lambda_size == 0 {
            bail!(Error::Config("lambda_size must be positive".into()));
        }
        let mut r = run.rng(2);
        let draws: Vec<f64> = (0..lambda_draws)
            .map(|_| {
                let m: Vec<f64> = (0..lambda_size * lambda_size)
                    .map(|_| StandardNormal.sample(&mut r))
                    .collect();
                antisymmetric_ratio(&m, lambda_size)
            })
            .collect::<mdet_core::Result<_>>()?;
        let est = Estimate::from_samples(&draws);
        report.push(
            Record::new("lambda_random", est.mean, "1")
                .stderr(est.stderr)
                .with("samples", est.samples)
                .with("size", lambda_size),
        );
        run.manifest.result("lambda_random", est.mean);
    }

    if !rotations.is_empty() {
        let sys = &systems[0];
        let mut csv = String::from(
            "rotation,q0,q1,q2,q3,atom,raw_x,raw_y,raw_z,f_x,f_y,f_z,magnitude,ratio\n",
        );
        let mut records = 0;
        for atom in 0..sys.n_atoms() {
            for r in rotation_grid_forces(provider.as_ref(), sys, atom, &rotations)? {
                let q = r.quaternion;
                let _ = writeln!(
                    csv,
                    "{},{:.12},{:.12},{:.12},{:.12},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12}",
                    r.rotation, q[0], q[1], q[2], q[3], r.atom, r.raw[0], r.raw[1], r.raw[2], r.force[0], r.force[1],
                    r.force[2], r.magnitude, r.ratio
                );
                records += 1;
            }
        }
        run.write("grid.csv", &csv)?;
        run.manifest.result("grid_records", records);
    }

    run.write("report.jsonl", &report.to_json_lines())?;
    run.finish("ok")
}
