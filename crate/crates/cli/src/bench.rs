use std::fmt::Write as _;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::Args;
use mdet_core::autodiff::Tape;
use mdet_core::config::KeyValues;
use mdet_core::dataio::dataset::random_parent;
use mdet_core::model::{Model, ModelConfig};
use mdet_core::system::MolecularSystem;
use mdet_core::{Error, Precision, Real};
use rayon::prelude::*;

use crate::context::{flag, species, List, Run};

#[derive(Args)]
pub struct BenchArgs {
    /// Model preset: toy or full.
    #[arg(long, value_parser = ["toy", "full"])]
    preset: Option<String>,
    /// Atom counts, comma separated.
    #[arg(long)]
    sizes: Option<String>,
    /// Structures per forward batch, comma separated.
    #[arg(long)]
    batch_sizes: Option<String>,
    /// Timed repetitions per cell; the median is reported.
    #[arg(long)]
    repeats: Option<usize>,
}

impl BenchArgs {
    pub fn overrides(&self, kv: &mut KeyValues) {
        flag(kv, "preset", self.preset.as_deref());
        flag(kv, "sizes", self.sizes.as_deref());
        flag(kv, "batch_sizes", self.batch_sizes.as_deref());
        flag(kv, "repeats", self.repeats);
    }
}

struct Cell {
    n_atoms: usize,
    batch_size: usize,
    median: f64,
    tape_bytes: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Bytes the forward tape holds for one structure.
fn tape_bytes<T: Real>(model: &Model<T>, sys: &MolecularSystem) -> Result<usize> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    model.record(&mut tape, &bound, sys, None, false)?;
    Ok(tape.stored_bytes())
}

fn forward<T: Real>(model: &Model<T>, batch: &[MolecularSystem]) -> Result<f64> {
    let start = Instant::now();
    batch
        .par_iter()
        .map(|s| model.predict_forces(s).map(|_| ()))
        .collect::<mdet_core::Result<Vec<()>>>()?;
    Ok(start.elapsed().as_secs_f64())
}

fn measure<T: Real>(
    run: &Run,
    cfg: ModelConfig,
    sizes: &[usize],
    batches: &[usize],
    repeats: usize,
    zs: &[u32],
) -> Result<Vec<Cell>> {
    let model: Model<T> = Model::init(cfg, &mut run.rng(1))?;
    let mut rng = run.rng(0);
    let mut cells = Vec::new();
    for &n in sizes {
        let largest = batches.iter().copied().max().unwrap_or(1);
        let systems: Vec<MolecularSystem> = (0..largest)
            .map(|_| random_parent(n, zs, 1.5, &mut rng))
            .collect();
        let bytes = tape_bytes(&model, &systems[0])?;
        forward(&model, &systems[..1])?;
        for &b in batches {
            let times = (0..repeats)
                .map(|_| forward(&model, &systems[..b]))
                .collect::<Result<Vec<_>>>()?;
            let cell = Cell {
                n_atoms: n,
                batch_size: b,
                median: median(times),
                tape_bytes: bytes,
            };
            eprintln!("N {:>4}  batch {:>3}  median {:.6} s", n, b, cell.median);
            cells.push(cell);
        }
    }
    Ok(cells)
}

pub fn run(run: &mut Run) -> Result<()> {
    let preset = run
        .kv
        .read::<String>("preset")?
        .unwrap_or_else(|| "toy".into());
    let mut cfg = match preset.as_str() {
        "toy" => ModelConfig::toy(),
        "full" => ModelConfig::full(),
        other => bail!(Error::Config(format!("unknown preset `{other}`"))),
    };
    cfg.apply(&mut run.kv)?;
    cfg.validate()?;
    let sizes = run
        .kv
        .read::<List<usize>>("sizes")?
        .map_or(vec![8, 16, 32, 64], |l| l.0);
    let batches = run
        .kv
        .read::<List<usize>>("batch_sizes")?
        .map_or(vec![1, 8, 64], |l| l.0);
    let repeats = run.kv.read::<usize>("repeats")?.unwrap_or(3);
    let zs = species(&mut run.kv, "C")?;
    if sizes.is_empty()
        || sizes.contains(&0)
        || batches.is_empty()
        || batches.contains(&0)
        || repeats == 0
    {
        bail!(Error::Config(
            "sizes, batch sizes and repeats must be positive".into()
        ));
    }
    run.manifest.config("preset", &preset);
    run.manifest.config("model", &cfg);
    run.manifest.config("sizes", &sizes);
    run.manifest.config("batch_sizes", &batches);
    run.manifest.config("repeats", repeats);
    run.manifest.config("species", &zs);
    run.start()?;

    let cells = match run.precision {
        Precision::F32 => measure::<f32>(run, cfg, &sizes, &batches, repeats, &zs)?,
        Precision::F64 => measure::<f64>(run, cfg, &sizes, &batches, repeats, &zs)?,
    };
    let mut csv = String::from(
        "n_atoms,batch_size,median_seconds,seconds_per_structure,tape_bytes_per_structure\n",
    );
    for c in &cells {
        let _ = writeln!(
            csv,
            "{},{},{:.9},{:.9},{}",
            c.n_atoms,
            c.batch_size,
            c.median,
            c.median / c.batch_size as f64,
            c.tape_bytes
        );
    }
    run.write("bench.csv", &csv)?;
    let at = |n: usize| {
        cells
            .iter()
            .find(|c| c.n_atoms == n && c.batch_size == batches[0])
            .map(|c| c.median)
    };
    if let (Some(a), Some(b)) = (at(32), at(64)) {
        run.manifest.result("time_ratio_64_32", b / a);
    }
    run.finish("ok")
}
