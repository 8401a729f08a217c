//! `mdet`: train, simulate, audit, analyse and benchmark the edge-transformer
//! force field.

mod audit;
mod bench;
mod context;
mod simulate;
mod spectrum;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};
use mdet_core::config::KeyValues;
use mdet_core::Error;

use context::{flag, Run};

#[derive(Parser)]
#[command(name = "mdet", version, about = "Edge-transformer force field toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Key-value config file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Floating-point width for the learned model.
    #[arg(long, global = true, value_parser = ["32", "64"])]
    precision: Option<String>,
    /// Worker threads; 0 or unset uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a synthetic or extended-XYZ corpus.
    Train(train::TrainArgs),
    /// Run molecular dynamics with a checkpoint or an analytic oracle.
    Simulate(simulate::SimulateArgs),
    /// Equivariance error, rotation grids and Jacobian asymmetry.
    Audit(audit::AuditArgs),
    /// Vibrational spectrum of a recorded trajectory.
    Spectrum(spectrum::SpectrumArgs),
    /// Forward-pass timing and tape memory over system sizes.
    Bench(bench::BenchArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Simulate(_) => "simulate",
            Command::Audit(_) => "audit",
            Command::Spectrum(_) => "spectrum",
            Command::Bench(_) => "bench",
        }
    }
}

fn settings(cli: &Cli) -> Result<KeyValues> {
    let mut kv = match &cli.global.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            KeyValues::parse(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => KeyValues::default(),
    };
    flag(&mut kv, "seed", cli.global.seed);
    flag(&mut kv, "precision", cli.global.precision.as_deref());
    flag(&mut kv, "threads", cli.global.threads);
    match &cli.command {
        Command::Train(a) => a.overrides(&mut kv),
        Command::Simulate(a) => a.overrides(&mut kv),
        Command::Audit(a) => a.overrides(&mut kv),
        Command::Spectrum(a) => a.overrides(&mut kv),
        Command::Bench(a) => a.overrides(&mut kv),
    }
    Ok(kv)
}

fn execute(cli: Cli) -> Result<()> {
    let kv = settings(&cli)?;
    let mut run = Run::new(cli.command.name(), kv, cli.global.out.clone())?;
    match cli.command {
        Command::Train(a) => train::run(&mut run, a),
        Command::Simulate(_) => simulate::run(&mut run),
        Command::Audit(_) => audit::run(&mut run),
        Command::Spectrum(_) => spectrum::run(&mut run),
        Command::Bench(_) => bench::run(&mut run),
    }
}

fn numerical(e: &Error) -> bool {
    match e {
        Error::NonFinite { .. }
        | Error::NonFiniteAttention { .. }
        | Error::NonFiniteGradient { .. }
        | Error::Diverged { .. }
        | Error::Unstable { .. } => true,
        Error::Provider { source, .. } => numerical(source),
        _ => false,
    }
}

/// 2 for numerical aborts, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .filter_map(|c| c.downcast_ref::<Error>())
        .any(numerical);
    if numeric {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
