use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use posecal_cli::{
    compactness_row, correlation_rows, emit, run_trial, run_trials, write_csv, CompactnessRow, TrialConfig,
};
use posecal_core::synth::{run_correlation_experiment, CorrelationConfig, Layout};
use posecal_core::BoardGeometry;

const USAGE_ERROR: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "posecal", version, about = "Guided planar-target camera calibration on simulated cameras")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every experiment. Flags override `--config`.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Pixel noise standard deviation of detected corners.
    #[arg(long)]
    noise: Option<f64>,
    /// Convergence threshold on the relative variance decrease, in (0, 1).
    #[arg(long)]
    threshold: Option<f64>,
    /// Spread of sampled cameras around the nominal webcam.
    #[arg(long)]
    deviation: Option<f64>,
    /// JSON file with any of: seed, noise, threshold, deviation, cameras, seeds, layout.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file, written atomically; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum LayoutArg {
    KFirst,
    DistFirst,
    Both,
}

impl LayoutArg {
    fn layouts(self) -> Vec<Layout> {
        match self {
            LayoutArg::KFirst => vec![Layout::KFirst],
            LayoutArg::DistFirst => vec![Layout::DistFirst],
            LayoutArg::Both => vec![Layout::KFirst, Layout::DistFirst],
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one guided session on a sampled camera and report the result as JSON.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Record per-frame estimates and uncertainties over fixed pose sequences.
    ///
    /// Writes CSV with columns layout, camera, frame, group, parameter, value,
    /// sigma, iod: one row per camera, frame (1-based) and intrinsic parameter.
    /// `group` is the kind of pose the frame was taken at (init, pinhole or
    /// distortion), `sigma` the parameter's standard deviation and `iod` its
    /// variance over magnitude.
    Correlation {
        #[command(flatten)]
        common: Common,
        /// Number of sampled cameras.
        #[arg(long)]
        cameras: Option<usize>,
        /// Which block comes first in the sequence.
        #[arg(long, value_enum)]
        layout: Option<LayoutArg>,
    },
    /// Compare guided sequences with their greedy compaction.
    ///
    /// Writes CSV with columns seed, guided_frames, guided_error,
    /// compact_frames, compact_error; errors are held-out RMS reprojection
    /// errors in pixels.
    Compactness {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Serve the calibration HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
    },
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    noise: Option<f64>,
    threshold: Option<f64>,
    deviation: Option<f64>,
    cameras: Option<usize>,
    seeds: Option<u64>,
    layout: Option<LayoutArg>,
}

/// A failure caused by the invocation rather than the run.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn load(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

struct Resolved {
    seed: u64,
    trial: TrialConfig,
    file: FileConfig,
}

fn resolve(common: &Common) -> Result<Resolved> {
    let file = load(common.config.as_deref())?;
    let d = TrialConfig::default();
    let trial = TrialConfig {
        noise: common.noise.or(file.noise).unwrap_or(d.noise),
        threshold: common.threshold.or(file.threshold).unwrap_or(d.threshold),
        deviation: common.deviation.or(file.deviation).unwrap_or(d.deviation),
        ..d
    };
    if !(trial.noise >= 0.0 && trial.noise.is_finite()) {
        return Err(usage(format!("--noise must be finite and non-negative, got {}", trial.noise)));
    }
    if !(trial.deviation >= 0.0 && trial.deviation.is_finite()) {
        return Err(usage(format!("--deviation must be finite and non-negative, got {}", trial.deviation)));
    }
    if !(trial.threshold > 0.0 && trial.threshold < 1.0) {
        return Err(usage(format!("--threshold must lie in (0, 1), got {}", trial.threshold)));
    }
    Ok(Resolved {
        seed: common.seed.or(file.seed).unwrap_or(0),
        trial,
        file,
    })
}

fn calibrate(common: &Common) -> Result<()> {
    let r = resolve(common)?;
    let run = run_trial(&r.trial, r.seed).context("guided session failed")?;
    if !run.trial.converged {
        log::warn!("session stopped before convergence after {} submissions", run.trial.submissions);
    }
    let mut json = serde_json::to_vec_pretty(&run.trial)?;
    json.push(b'\n');
    emit(common.out.as_deref(), &json)
}

fn correlation(common: &Common, cameras: Option<usize>, layout: Option<LayoutArg>) -> Result<()> {
    let r = resolve(common)?;
    let n_cameras = cameras.or(r.file.cameras).unwrap_or(CorrelationConfig::default().n_cameras);
    if n_cameras == 0 {
        return Err(usage("--cameras must be positive"));
    }
    let layout = layout.or(r.file.layout).unwrap_or(LayoutArg::Both);
    let board = BoardGeometry::default();
    let mut rows = Vec::new();
    for l in layout.layouts() {
        let config = CorrelationConfig {
            n_cameras,
            layout: l,
            deviation: r.trial.deviation,
            noise_sigma: r.trial.noise,
            seed: r.seed,
            ..CorrelationConfig::default()
        };
        let table = run_correlation_experiment(&config, &board).with_context(|| format!("layout {l}"))?;
        for (cam, why) in &table.failures {
            log::warn!("layout {l}: camera {cam} excluded: {why}");
        }
        rows.extend(correlation_rows(&table));
    }
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows)?;
    emit(common.out.as_deref(), &buf)
}

fn compactness(common: &Common, seeds: Option<u64>) -> Result<()> {
    let r = resolve(common)?;
    let n = seeds.or(r.file.seeds).unwrap_or(20);
    if n == 0 {
        return Err(usage("--seeds must be positive"));
    }
    let mut rows: Vec<CompactnessRow> = Vec::new();
    for (seed, res) in run_trials(r.seed..r.seed + n, |s| compactness_row(&r.trial, s)) {
        match res {
            Ok(row) => rows.push(row),
            Err(e) => log::warn!("seed {seed} excluded: {e}"),
        }
    }
    if rows.is_empty() {
        bail!("every seed failed");
    }
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows)?;
    emit(common.out.as_deref(), &buf)
}

fn serve(addr: std::net::SocketAddr) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(posecal_service::serve(addr)).with_context(|| format!("serving on {addr}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match &cli.command {
        Command::Calibrate { common } => calibrate(common),
        Command::Correlation { common, cameras, layout } => correlation(common, *cameras, *layout),
        Command::Compactness { common, seeds } => compactness(common, *seeds),
        Command::Serve { addr } => serve(*addr),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(USAGE_ERROR)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
