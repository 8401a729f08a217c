use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::Args;
use mdet_core::config::KeyValues;
use mdet_core::dataio::{generate_synthetic, parse_extended_xyz, split, Dataset, SyntheticSpec};
use mdet_core::model::{Model, ModelConfig};
use mdet_core::training::{force_mae, train, TrainConfig};
use mdet_core::{Error, Precision, Real};

use crate::context::{flag, species, switch, Oracle, Run};

#[derive(Args)]
pub struct TrainArgs {
    /// Hyperparameter preset: `toy` (desk scale) or `full`.
    #[arg(long, value_parser = ["toy", "full"])]
    preset: Option<String>,
    /// Labelled extended-XYZ corpus; a synthetic corpus is generated otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Total optimiser steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Resolve the configuration and write the manifest without training.
    #[arg(long)]
    dry_run: bool,
}

impl TrainArgs {
    pub fn overrides(&self, kv: &mut KeyValues) {
        flag(kv, "preset", self.preset.as_deref());
        flag(kv, "data", self.data.as_ref().map(|p| p.display()));
        flag(kv, "total_steps", self.steps);
        flag(kv, "learning_rate", self.lr);
        flag(kv, "batch_size", self.batch_size);
        switch(kv, "dry_run", self.dry_run);
    }
}

struct Corpus {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn corpus(run: &mut Run) -> Result<Corpus> {
    let kv = &mut run.kv;
    let data = kv.read::<PathBuf>("data")?;
    let mut spec = SyntheticSpec::default();
    kv.read_into("n_structures", &mut spec.n_structures)?;
    kv.read_into(
        "conformers_per_structure",
        &mut spec.conformers_per_structure,
    )?;
    kv.read_into("spread", &mut spec.spread)?;
    kv.read_into("min_atoms", &mut spec.min_atoms)?;
    kv.read_into("max_atoms", &mut spec.max_atoms)?;
    spec.species = species(kv, "H,C,N,O")?;
    let name = kv
        .read::<String>("oracle")?
        .unwrap_or_else(|| "morse".into());
    let oracle: Oracle = name
        .parse()
        .map_err(|_| Error::Config(format!("unknown oracle `{name}`")))?;
    if oracle == Oracle::Harmonic {
        bail!(Error::Config(
            "the harmonic oracle is tied to one structure and cannot label a corpus".into()
        ));
    }
    let mut fractions = [0.9, 0.05, 0.05];
    kv.read_into("val_fraction", &mut fractions[1])?;
    kv.read_into("test_fraction", &mut fractions[2])?;
    fractions[0] = 1.0 - fractions[1] - fractions[2];

    let mut rng = run.rng(0);
    let ds = match &data {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let systems =
                parse_extended_xyz(&text).with_context(|| format!("parsing {}", path.display()))?;
            if let Some(k) = systems.iter().position(|s| s.forces.is_none()) {
                bail!(Error::Invalid(format!(
                    "structure {k} in {} has no force labels",
                    path.display()
                )));
            }
            Dataset {
                groups: (0..systems.len()).collect(),
                systems,
            }
        }
        None => generate_synthetic(&oracle.potential(&[]), &spec, &mut rng)?,
    };
    match &data {
        Some(p) => run.manifest.config(
            "data",
            serde_json::json!({ "path": p, "fractions": fractions }),
        ),
        None => run.manifest.config(
            "data",
            serde_json::json!({
                "oracle": oracle,
                "n_structures": spec.n_structures,
                "conformers_per_structure": spec.conformers_per_structure,
                "spread": spec.spread,
                "min_atoms": spec.min_atoms,
                "max_atoms": spec.max_atoms,
                "species": spec.species,
                "fractions": fractions,
            }),
        ),
    }
    let (train, val, test) = split(&ds, fractions, run.seed)?;
    Ok(Corpus { train, val, test })
}

pub fn run(run: &mut Run, _args: TrainArgs) -> Result<()> {
    let preset = run
        .kv
        .read::<String>("preset")?
        .unwrap_or_else(|| "toy".into());
    let (mut model_cfg, mut train_cfg) = match preset.as_str() {
        "toy" => (ModelConfig::toy(), TrainConfig::toy()),
        "full" => (ModelConfig::full(), TrainConfig::full()),
        other => bail!(Error::Config(format!("unknown preset `{other}`"))),
    };
    train_cfg.seed = run.seed;
    model_cfg.apply(&mut run.kv)?;
    train_cfg.apply(&mut run.kv)?;
    let dry_run = run.kv.read::<bool>("dry_run")?.unwrap_or(false);
    let corpus = corpus(run)?;
    model_cfg.validate()?;
    train_cfg.validate()?;
    run.manifest.config("preset", &preset);
    run.manifest.config("model", &model_cfg);
    run.manifest.config("train", &train_cfg);
    run.manifest.result("train_structures", corpus.train.len());
    run.manifest.result("val_structures", corpus.val.len());
    run.manifest.result("test_structures", corpus.test.len());
    run.start()?;
    if dry_run {
        return run.finish("dry_run");
    }
    match run.precision {
        Precision::F32 => fit::<f32>(run, model_cfg, &train_cfg, &corpus),
        Precision::F64 => fit::<f64>(run, model_cfg, &train_cfg, &corpus),
    }
}

fn fit<T: Real>(
    run: &mut Run,
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    corpus: &Corpus,
) -> Result<()> {
    let mut model: Model<T> = Model::init(model_cfg, &mut run.rng(1))?;
    run.manifest.result("parameters", model.params.n_scalars());
    let outcome = train(&mut model, &corpus.train, &corpus.val, cfg, |row| {
        if let Some(mae) = row.val_mae {
            eprintln!(
                "step {:>7}  lr {:.3e}  loss {:.6}  val MAE {:.6} eV/Å",
                row.step + 1,
                row.lr,
                row.loss,
                mae
            );
        }
    });
    let report = match outcome {
        Ok(r) => r,
        Err(e) => {
            run.manifest.result("error", e.to_string());
            run.finish("diverged")?;
            return Err(e.into());
        }
    };
    let ckpt = run.path("model.ckpt");
    model.save(&ckpt)?;
    run.manifest.artifact("model.ckpt");
    run.manifest.artifact("model.ckpt.config");
    run.write("metrics.csv", &report.metrics_csv())?;
    run.manifest.result("checkpoint", "model.ckpt");
    run.manifest
        .result("initial_val_mae", report.initial_val_mae);
    run.manifest.result("final_val_mae", report.final_val_mae);
    run.manifest
        .result("val_mean_force_norm", corpus.val.mean_force_norm());
    if !corpus.test.is_empty() {
        run.manifest
            .result("test_mae", force_mae(&model, &corpus.test.systems)?);
    }
    run.finish("ok")
}
