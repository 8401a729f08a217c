use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::Args;
use mdet_core::config::KeyValues;
use mdet_core::dataio::{elements, parse_frames};
use mdet_core::diagnostics::{h_r_histogram, vacf_spectrum, Window};
use mdet_core::Error;

use crate::context::{flag, Run};

#[derive(Args)]
pub struct SpectrumArgs {
    /// Trajectory written by `simulate` (extended XYZ with `vel` and `time`).
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// hann or rectangular.
    #[arg(long)]
    window: Option<String>,
    /// Longest autocorrelation lag, in frames.
    #[arg(long)]
    max_lag: Option<usize>,
    /// Bin width of the distance histogram, Å.
    #[arg(long)]
    hr_bin: Option<f64>,
}

impl SpectrumArgs {
    pub fn overrides(&self, kv: &mut KeyValues) {
        flag(
            kv,
            "trajectory",
            self.trajectory.as_ref().map(|p| p.display()),
        );
        flag(kv, "window", self.window.as_deref());
        flag(kv, "max_lag", self.max_lag);
        flag(kv, "hr_bin", self.hr_bin);
    }
}

pub fn run(run: &mut Run) -> Result<()> {
    let Some(path) = run.kv.read::<PathBuf>("trajectory")? else {
        bail!(Error::Config("spectrum needs a trajectory".into()));
    };
    let window = match run
        .kv
        .read::<String>("window")?
        .as_deref()
        .unwrap_or("hann")
    {
        "hann" => Window::Hann,
        "rectangular" | "none" => Window::Rectangular,
        other => bail!(Error::Config(format!("unknown window `{other}`"))),
    };
    let max_lag = run.kv.read::<usize>("max_lag")?;
    let hr_bin = run.kv.read::<f64>("hr_bin")?.unwrap_or(0.05);
    run.manifest
        .config("trajectory", path.display().to_string());
    run.manifest.config("window", window);
    run.manifest.config("max_lag", max_lag);
    run.manifest.config("hr_bin", hr_bin);
    run.start()?;

    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let frames = parse_frames(&text).with_context(|| format!("parsing {}", path.display()))?;
    let Some(first) = frames.first() else {
        bail!(Error::Invalid(format!(
            "{} holds no frames",
            path.display()
        )));
    };
    let z = first.system.atomic_numbers.clone();
    let mut times = Vec::with_capacity(frames.len());
    let mut velocities = Vec::with_capacity(frames.len());
    for (k, f) in frames.iter().enumerate() {
        if f.system.atomic_numbers != z {
            bail!(Error::Invalid(format!(
                "frame {k} has a different composition"
            )));
        }
        let (Some(t), Some(v)) = (f.time, &f.velocities) else {
            bail!(Error::Invalid(format!(
                "frame {k} lacks `time=` or velocities"
            )));
        };
        times.push(t);
        velocities.push(v.clone());
    }
    let masses: Vec<f64> = z
        .iter()
        .map(|&z| {
            elements::mass(z).ok_or_else(|| Error::Invalid(format!("no mass for element {z}")))
        })
        .collect::<std::result::Result<_, _>>()?;

    let spectrum = vacf_spectrum(&times, &velocities, &masses, window, max_lag)?;
    run.write("spectrum.csv", &spectrum.to_csv())?;
    let dt = if times.len() > 1 {
        times[1] - times[0]
    } else {
        0.0
    };
    let mut vacf = String::from("lag_fs,vacf\n");
    for (k, c) in spectrum.vacf.iter().enumerate() {
        let _ = writeln!(vacf, "{},{:.12e}", k as f64 * dt, c);
    }
    run.write("vacf.csv", &vacf)?;
    let positions: Vec<Vec<[f64; 3]>> = frames.into_iter().map(|f| f.system.positions).collect();
    if z.len() > 1 {
        run.write("h_r.csv", &h_r_histogram(&positions, hr_bin)?.to_csv())?;
    }
    if let Some((w, p)) = spectrum.peak() {
        run.manifest.result("peak_wavenumber", w);
        run.manifest.result("peak_power", p);
    }
    run.manifest.result("bin_width", spectrum.bin_width);
    run.manifest.result("frames", times.len());
    run.finish("ok")
}
