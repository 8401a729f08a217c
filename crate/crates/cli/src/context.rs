//! Shared plumbing: resolved settings, the run manifest, providers and
//! structure sources.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context as _, Result};
use mdet_core::config::KeyValues;
use mdet_core::dataio::dataset::random_parent;
use mdet_core::dataio::potentials::{LjParams, PairTable};
use mdet_core::dataio::{elements, parse_extended_xyz, SyntheticPotential};
use mdet_core::md::{ForceProvider, ModelProvider};
use mdet_core::model::Model;
use mdet_core::system::MolecularSystem;
use mdet_core::Precision;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

/// Settings every subcommand shares, plus the key-value store the
/// subcommand reads its own options from.
pub struct Run {
    pub kv: KeyValues,
    pub seed: u64,
    pub precision: Precision,
    pub out: PathBuf,
    pub manifest: Manifest,
}

impl Run {
    pub fn new(command: &str, mut kv: KeyValues, out: PathBuf) -> Result<Self> {
        let seed = kv.read::<u64>("seed")?.unwrap_or(0);
        let bits = kv.read::<u32>("precision")?.unwrap_or(32);
        let Some(precision) = Precision::from_bits(bits) else {
            bail!(mdet_core::Error::Config(format!(
                "precision must be 32 or 64, got {bits}"
            )));
        };
        let threads = kv.read::<usize>("threads")?.unwrap_or(0);
        if threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .context("configuring the thread pool")?;
        }
        let mut manifest = Manifest::new(command, &kv);
        manifest.set("seed", seed);
        manifest.set("precision", precision.bits());
        manifest.set("threads", rayon::current_num_threads());
        Ok(Self {
            kv,
            seed,
            precision,
            out,
            manifest,
        })
    }

    /// Fails with every key nobody consumed, then creates the output
    /// directory and writes the initial manifest.
    pub fn start(&mut self) -> Result<()> {
        self.kv.finish()?;
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        self.manifest.set("status", "running");
        self.write_manifest()
    }

    /// Independent generator for one purpose of this run.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        self.manifest.artifact(name);
        Ok(())
    }

    pub fn write_manifest(&self) -> Result<()> {
        let p = self.path("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest.0)?;
        std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))
    }

    pub fn finish(&mut self, status: &str) -> Result<()> {
        self.manifest.set("status", status);
        self.write_manifest()
    }
}

pub struct Manifest(Map<String, Value>);

impl Manifest {
    fn new(command: &str, kv: &KeyValues) -> Self {
        let inputs: Map<String, Value> =
            kv.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
        let mut m = Map::new();
        m.insert("command".into(), json!(command));
        m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        m.insert("argv".into(), json!(std::env::args().collect::<Vec<_>>()));
        m.insert("inputs".into(), Value::Object(inputs));
        m.insert("config".into(), Value::Object(Map::new()));
        m.insert("artifacts".into(), json!([]));
        m.insert("results".into(), Value::Object(Map::new()));
        Self(m)
    }

    pub fn set(&mut self, key: &str, v: impl Into<Value>) {
        self.0.insert(key.into(), v.into());
    }

    /// Resolved settings under `config.<key>`.
    pub fn config(&mut self, key: &str, v: impl serde::Serialize) {
        let v = serde_json::to_value(v).expect("config serialises");
        self.section("config").insert(key.into(), v);
    }

    pub fn result(&mut self, key: &str, v: impl Into<Value>) {
        self.section("results").insert(key.into(), v.into());
    }

    fn section(&mut self, name: &str) -> &mut Map<String, Value> {
        self.0
            .get_mut(name)
            .and_then(Value::as_object_mut)
            .expect("section exists")
    }

    pub fn artifact(&mut self, name: &str) {
        let list = self
            .0
            .get_mut("artifacts")
            .and_then(Value::as_array_mut)
            .expect("artifacts");
        if !list.iter().any(|v| v == name) {
            list.push(json!(name));
        }
    }
}

/// Put `value` under `key` when a flag was given; flags beat config files.
pub fn flag<T: ToString>(kv: &mut KeyValues, key: &str, value: Option<T>) {
    if let Some(v) = value {
        kv.set(key, v);
    }
}

pub fn switch(kv: &mut KeyValues, key: &str, on: bool) {
    if on {
        kv.set(key, true);
    }
}

/// Comma-separated list value.
#[derive(Clone, Debug)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T> {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(|_| ()))
            .collect::<std::result::Result<Vec<T>, ()>>()
            .map(List)
    }
}

/// Element symbols or atomic numbers, comma separated.
pub fn species(kv: &mut KeyValues, default: &str) -> Result<Vec<u32>> {
    let text = kv
        .read::<String>("species")?
        .unwrap_or_else(|| default.to_string());
    let zs = text
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<u32>()
                .ok()
                .filter(|z| elements::symbol(*z).is_some())
                .or_else(|| elements::atomic_number(t))
                .ok_or_else(|| {
                    mdet_core::Error::Config(format!("unknown element `{t}` in species"))
                })
        })
        .collect::<std::result::Result<Vec<u32>, _>>()?;
    if zs.is_empty() {
        bail!(mdet_core::Error::Config("species list is empty".into()));
    }
    Ok(zs)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Oracle {
    Morse,
    LennardJones,
    Harmonic,
}

impl FromStr for Oracle {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "morse" => Ok(Oracle::Morse),
            "lennard_jones" | "lennard-jones" | "lj" => Ok(Oracle::LennardJones),
            "harmonic" => Ok(Oracle::Harmonic),
            _ => Err(()),
        }
    }
}

impl Oracle {
    /// Pair oracles ignore `reference`; the harmonic network is built at
    /// rest in it.
    pub fn potential(&self, reference: &[[f64; 3]]) -> SyntheticPotential {
        match self {
            Oracle::Morse => SyntheticPotential::morse_default(),
            Oracle::LennardJones => {
                SyntheticPotential::LennardJones(PairTable::uniform(LjParams::default()))
            }
            Oracle::Harmonic => SyntheticPotential::harmonic_network(reference, 4.0, 3.0),
        }
    }

    pub fn bond_length(&self) -> f64 {
        match self {
            Oracle::Harmonic => SyntheticPotential::morse_default().bond_length(),
            o => o.potential(&[]).bond_length(),
        }
    }
}

/// Where forces come from: a trained checkpoint or an analytic oracle.
#[derive(Clone, Debug, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Checkpoint(PathBuf),
    Oracle(Oracle),
}

impl Source {
    pub fn read(kv: &mut KeyValues) -> Result<Self> {
        let ckpt = kv.read::<PathBuf>("checkpoint")?;
        let oracle = kv.read::<String>("oracle")?;
        match (ckpt, oracle) {
            (Some(_), Some(_)) => bail!(mdet_core::Error::Config(
                "give either checkpoint or oracle, not both".into()
            )),
            (Some(p), None) => Ok(Source::Checkpoint(p)),
            (None, o) => {
                let name = o.unwrap_or_else(|| "morse".into());
                let oracle = name
                    .parse()
                    .map_err(|_| mdet_core::Error::Config(format!("unknown oracle `{name}`")))?;
                Ok(Source::Oracle(oracle))
            }
        }
    }

    pub fn bond_length(&self) -> f64 {
        match self {
            Source::Oracle(o) => o.bond_length(),
            Source::Checkpoint(_) => SyntheticPotential::morse_default().bond_length(),
        }
    }

    pub fn provider(
        &self,
        precision: Precision,
        reference: &MolecularSystem,
    ) -> Result<Box<dyn ForceProvider>> {
        Ok(match self {
            Source::Oracle(o) => Box::new(o.potential(&reference.positions)),
            Source::Checkpoint(p) => match precision {
                Precision::F32 => Box::new(ModelProvider {
                    model: load::<f32>(p)?,
                }),
                Precision::F64 => Box::new(ModelProvider {
                    model: load::<f64>(p)?,
                }),
            },
        })
    }
}

fn load<T: mdet_core::Real>(p: &Path) -> Result<Model<T>> {
    Model::load(p).with_context(|| format!("loading checkpoint {}", p.display()))
}

/// Systems from `key` (an extended-XYZ file) or `count` random clusters.
pub fn structures(
    kv: &mut KeyValues,
    key: &str,
    count: usize,
    bond: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MolecularSystem>> {
    let n_atoms = kv.read::<usize>("n_atoms")?.unwrap_or(5);
    let zs = species(kv, "H,C,N,O")?;
    if let Some(path) = kv.read::<PathBuf>(key)? {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let systems =
            parse_extended_xyz(&text).with_context(|| format!("parsing {}", path.display()))?;
        if systems.is_empty() {
            bail!(mdet_core::Error::Invalid(format!(
                "{} holds no structures",
                path.display()
            )));
        }
        return Ok(systems);
    }
    if n_atoms == 0 {
        bail!(mdet_core::Error::Config("n_atoms must be positive".into()));
    }
    Ok((0..count)
        .map(|_| random_parent(n_atoms, &zs, bond, rng))
        .collect())
}
