//! Experiment drivers and output helpers behind the `posecal` binary.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use posecal_core::calibrate::LmOptions;
use posecal_core::poses::TargetGroup;
use posecal_core::session::SessionConfig;
use posecal_core::synth::{
    estimation_error, generate_test_set, greedy_compact, run_guided_session, sample_camera, CorrelationTable,
    GroundTruthCamera, GuidedConfig, GuidedRun, Layout, TestSet,
};
use posecal_core::{BoardGeometry, IntrinsicParams, Param};

/// Views in the held-out test set of every trial.
pub const TEST_FRAMES: usize = 50;
/// Offset between a trial's seed and its test-set seed.
pub const TEST_SEED_OFFSET: u64 = 1000;

/// Settings shared by guided-session trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub noise: f64,
    pub threshold: f64,
    pub deviation: f64,
    /// Pixel noise of the held-out test views.
    pub test_noise: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            noise: 1.0,
            threshold: SessionConfig::default().convergence_threshold,
            deviation: 0.1,
            test_noise: 1.0,
        }
    }
}

/// One guided session on a sampled camera, scored on held-out views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub seed: u64,
    pub truth: GroundTruthCamera,
    pub estimate: Option<IntrinsicParams>,
    pub converged: bool,
    pub keyframes: usize,
    pub submissions: usize,
    pub rejections: usize,
    /// Held-out RMS reprojection error in pixels.
    pub error: Option<f64>,
}

pub struct TrialRun {
    pub trial: Trial,
    pub run: GuidedRun,
    pub test: TestSet,
}

pub fn run_trial(config: &TrialConfig, seed: u64) -> posecal_core::Result<TrialRun> {
    let board = BoardGeometry::default();
    let nominal = GroundTruthCamera::webcam();
    let truth = sample_camera(&nominal.intrinsics, nominal.image_size, config.deviation, seed)?;
    let guided = GuidedConfig {
        session: SessionConfig {
            convergence_threshold: config.threshold,
            ..SessionConfig::default()
        },
        noise_sigma: config.noise,
        ..GuidedConfig::default()
    };
    let run = run_guided_session(&truth, &board, &guided, seed)?;
    let test = generate_test_set(&truth, &board, TEST_FRAMES, config.test_noise, seed + TEST_SEED_OFFSET)?;
    let estimate = run.session.estimate().map(|e| e.intrinsics);
    let error = match &estimate {
        Some(c) => Some(estimation_error(c, &test, &board, &LmOptions::default())?.rms),
        None => None,
    };
    let trial = Trial {
        seed,
        truth,
        estimate,
        converged: run.converged(),
        keyframes: run.keyframes().len(),
        submissions: run.submissions,
        rejections: run.rejections,
        error,
    };
    Ok(TrialRun { trial, run, test })
}

/// Guided sequence against its greedy compaction on the same test views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompactnessRow {
    pub seed: u64,
    pub guided_frames: usize,
    pub guided_error: f64,
    pub compact_frames: usize,
    pub compact_error: f64,
}

pub fn compactness_row(config: &TrialConfig, seed: u64) -> posecal_core::Result<CompactnessRow> {
    let TrialRun { trial, run, test } = run_trial(config, seed)?;
    let board = BoardGeometry::default();
    let c = greedy_compact(run.keyframes(), &test, &board, trial.truth.image_size, &LmOptions::default())?;
    Ok(CompactnessRow {
        seed,
        guided_frames: trial.keyframes,
        guided_error: trial.error.unwrap_or(f64::NAN),
        compact_frames: c.selected.len(),
        compact_error: *c.trace.last().expect("trace holds the init pair"),
    })
}

/// Trials for `seeds` in parallel, in seed order.
pub fn run_trials<T: Send>(
    seeds: impl IntoParallelIterator<Item = u64>,
    f: impl Fn(u64) -> posecal_core::Result<T> + Sync + Send,
) -> Vec<(u64, posecal_core::Result<T>)> {
    let mut out: Vec<_> = seeds.into_par_iter().map(|s| (s, f(s))).collect();
    out.sort_by_key(|(s, _)| *s);
    out
}

pub fn group_name(g: TargetGroup) -> &'static str {
    match g {
        TargetGroup::Pinhole => "pinhole",
        TargetGroup::Distortion => "distortion",
        TargetGroup::Init => "init",
    }
}

/// One row per camera, frame and parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub layout: Layout,
    pub camera: usize,
    pub frame: usize,
    pub group: String,
    pub parameter: String,
    pub value: f64,
    pub sigma: f64,
    pub iod: f64,
}

pub fn correlation_rows(table: &CorrelationTable) -> Vec<CorrelationRow> {
    let mut rows = Vec::with_capacity(table.records.len() * Param::ALL.len());
    for r in &table.records {
        for (i, p) in Param::ALL.iter().enumerate() {
            rows.push(CorrelationRow {
                layout: table.config.layout,
                camera: r.camera,
                frame: r.frame,
                group: group_name(r.group).into(),
                parameter: p.name().into(),
                value: r.value[i],
                sigma: r.sigma[i],
                iod: r.iod[i],
            });
        }
    }
    rows
}

/// Serialize `rows` as CSV with a header line.
pub fn write_csv<T: Serialize>(out: impl Write, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Write `bytes` to `path` through a temporary file in the same directory,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Write to `path`, or to stdout when there is none.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn csv_has_a_header() {
        let mut buf = Vec::new();
        let row = CompactnessRow {
            seed: 1,
            guided_frames: 10,
            guided_error: 0.9,
            compact_frames: 7,
            compact_error: 0.89,
        };
        write_csv(&mut buf, &[row]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "seed,guided_frames,guided_error,compact_frames,compact_error");
    }

    #[test]
    fn trials_come_back_in_seed_order() {
        let out = run_trials(vec![3u64, 1, 2], |s| Ok(s * 2));
        let seeds: Vec<u64> = out.iter().map(|(s, _)| *s).collect();
        assert_eq!(seeds, [1, 2, 3]);
    }
}
