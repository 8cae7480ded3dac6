use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::{sample_camera, GroundTruthCamera};
use super::render::{derive_seed, render_observation};
use crate::calibrate::{calibrate_from, calibrate_or_refine, CalibrationResult, FrameObservation, LmOptions};
use crate::error::{Error, Result};
use crate::geometry::{BoardGeometry, Param, NUM_INTRINSICS};
use crate::poses::{init_targets, PoseConfig, TargetGroup, TargetPlanner, TargetPose};
use crate::session::min_points_required;

const CAMERA_STREAM: u64 = 0x6361_6d65;
const FRAME_STREAM: u64 = 0x6672_616d;
/// Target poses tried per frame slot before the camera is given up.
const MAX_POSE_TRIES: usize = 8;
const PINHOLE_CYCLE: [Param; 4] = [Param::Fx, Param::Fy, Param::Cx, Param::Cy];

/// Which parameter group the first block of guided frames targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Pinhole poses first, then distortion poses.
    KFirst,
    /// Distortion poses first, then pinhole poses.
    DistFirst,
}

impl Layout {
    /// Group of the frame at 1-based position `frame`.
    pub fn group_of(self, frame: usize, first_block_end: usize) -> TargetGroup {
        if frame <= 2 {
            return TargetGroup::Init;
        }
        let first = frame <= first_block_end;
        match (self, first) {
            (Layout::KFirst, true) | (Layout::DistFirst, false) => TargetGroup::Pinhole,
            _ => TargetGroup::Distortion,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::KFirst => "k-first",
            Layout::DistFirst => "dist-first",
        })
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k-first" | "kfirst" => Ok(Layout::KFirst),
            "dist-first" | "distfirst" => Ok(Layout::DistFirst),
            _ => Err(Error::InvalidConfig(format!(
                "unknown layout `{s}` (expected k-first or dist-first)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelationConfig {
    pub n_cameras: usize,
    pub layout: Layout,
    /// Frames in the sequence, including the two initialization frames.
    pub frames: usize,
    /// Last frame (1-based) of the first guided block.
    pub first_block_end: usize,
    pub deviation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub camera: GroundTruthCamera,
    pub poses: PoseConfig,
    pub lm: LmOptions,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            n_cameras: 20,
            layout: Layout::KFirst,
            frames: 20,
            first_block_end: 10,
            deviation: 0.1,
            noise_sigma: 1.0,
            seed: 0,
            camera: GroundTruthCamera::webcam(),
            poses: PoseConfig::default(),
            lm: LmOptions::default(),
        }
    }
}

/// State of one camera's calibration after a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRecord {
    pub camera: usize,
    /// 1-based frame position.
    pub frame: usize,
    pub group: TargetGroup,
    pub value: [f64; NUM_INTRINSICS],
    pub sigma: [f64; NUM_INTRINSICS],
    pub iod: [f64; NUM_INTRINSICS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub config: CorrelationConfig,
    /// Records of successful cameras, ordered by camera then frame.
    pub records: Vec<CorrelationRecord>,
    /// Cameras excluded because their calibration failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

impl CorrelationTable {
    fn sigmas_at(&self, frame: usize, param: Param) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.frame == frame)
            .map(|r| r.sigma[param.index()])
            .collect()
    }

    /// Mean σ of `param` across cameras after `frame`.
    pub fn mean_sigma(&self, frame: usize, param: Param) -> f64 {
        let v = self.sigmas_at(frame, param);
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Sample standard deviation across cameras of σ of `param` after `frame`.
    pub fn spread_sigma(&self, frame: usize, param: Param) -> f64 {
        let v = self.sigmas_at(frame, param);
        if v.len() < 2 {
            return 0.0;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    }

    /// Decrease of the mean σ of `param` from frame `from` to frame `to`.
    pub fn sigma_drop(&self, param: Param, from: usize, to: usize) -> f64 {
        self.mean_sigma(from, param) - self.mean_sigma(to, param)
    }

    /// Frames recorded per camera, in order.
    pub fn frame_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.records.iter().map(|r| r.frame).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn cameras(&self) -> usize {
        let mut v: Vec<usize> = self.records.iter().map(|r| r.camera).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    }
}

fn record(camera: usize, frame: usize, group: TargetGroup, r: &CalibrationResult) -> CorrelationRecord {
    CorrelationRecord {
        camera,
        frame,
        group,
        value: r.intrinsics.to_array(),
        sigma: r.variances.map(f64::sqrt),
        iod: r.iod,
    }
}

struct CameraRun<'a> {
    cam: GroundTruthCamera,
    board: &'a BoardGeometry,
    config: &'a CorrelationConfig,
    camera_index: usize,
    rendered: usize,
}

impl CameraRun<'_> {
    /// Render `target` under the true camera; `None` if too little is visible.
    fn observe(&mut self, target: &TargetPose, frames_so_far: usize, is_init: bool) -> Result<Option<FrameObservation>> {
        let seed = derive_seed(self.config.seed, FRAME_STREAM, (self.camera_index as u64) << 16 | self.rendered as u64);
        self.rendered += 1;
        match render_observation(&target.pose, &self.cam, self.board, self.config.noise_sigma, seed) {
            Ok(f) if f.len() >= min_points_required(frames_so_far, is_init) => Ok(Some(f)),
            Ok(_) | Err(Error::NothingVisible) | Err(Error::BehindCamera { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn run(mut self) -> Result<Vec<CorrelationRecord>> {
        let cfg = self.config;
        let size = self.cam.image_size;
        // the nominal camera stands in for the bootstrap estimate
        let guess = cfg.camera.intrinsics.without_distortion();
        let init = init_targets(self.board, size, &guess, &cfg.poses)?;
        let mut frames = Vec::with_capacity(cfg.frames);
        for (k, t) in init.iter().enumerate() {
            let f = self
                .observe(t, k, true)?
                .ok_or_else(|| Error::NoPlacement("initialization pose not visible".into()))?;
            frames.push(f);
        }
        let mut est = calibrate_or_refine(&frames, self.board, size, &guess, &cfg.lm)?;
        let mut records = vec![record(self.camera_index, 2, TargetGroup::Init, &est)];

        let mut planner = TargetPlanner::new(cfg.poses, crate::geometry::DEFAULT_MAP_STRIDE);
        let mut cycle = 0;
        for frame in 3..=cfg.frames {
            let group = cfg.layout.group_of(frame, cfg.first_block_end);
            let mut observed = None;
            for _ in 0..MAX_POSE_TRIES {
                let target = match group {
                    TargetGroup::Distortion => planner.distortion(self.board, &est.intrinsics, size)?,
                    _ => {
                        let p = PINHOLE_CYCLE[cycle % PINHOLE_CYCLE.len()];
                        cycle += 1;
                        planner.pinhole(p, self.board, &est.intrinsics, size, &est.poses)?
                    }
                };
                if let Some(f) = self.observe(&target, frames.len(), false)? {
                    observed = Some(f);
                    break;
                }
            }
            let f = observed.ok_or_else(|| Error::NoPlacement(format!("no visible pose for frame {frame}")))?;
            frames.push(f);
            let mut known: Vec<_> = est.poses.iter().copied().map(Some).collect();
            known.push(None);
            est = calibrate_from(&frames, self.board, size, &est.intrinsics, &known, &cfg.lm)?;
            records.push(record(self.camera_index, frame, group, &est));
        }
        Ok(records)
    }
}

/// Uncertainty of every parameter along guided sequences with a fixed group
/// layout, over cameras sampled around `config.camera`.
///
/// Each sequence has two initialization frames, then `first_block_end − 2`
/// frames of one group and the remainder of the other. Pinhole frames cycle
/// through fx, fy, cx, cy. Poses are generated from the running estimate, and
/// σ is recorded from frame 2 on. Cameras run in parallel; results depend only
/// on the seed.
pub fn run_correlation_experiment(config: &CorrelationConfig, board: &BoardGeometry) -> Result<CorrelationTable> {
    if config.frames < 3 || config.first_block_end < 2 || config.first_block_end > config.frames {
        return Err(Error::InvalidConfig(format!(
            "sequence of {} frames with first block ending at {}",
            config.frames, config.first_block_end
        )));
    }
    let runs: Vec<(usize, Result<Vec<CorrelationRecord>>)> = (0..config.n_cameras)
        .into_par_iter()
        .map(|i| {
            let cam = sample_camera(
                &config.camera.intrinsics,
                config.camera.image_size,
                config.deviation,
                derive_seed(config.seed, CAMERA_STREAM, i as u64),
            );
            let out = cam.and_then(|cam| {
                CameraRun {
                    cam,
                    board,
                    config,
                    camera_index: i,
                    rendered: 0,
                }
                .run()
            });
            (i, out)
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in runs {
        match r {
            Ok(mut v) => records.append(&mut v),
            Err(e) => {
                log::warn!("camera {i} excluded: {e}");
                failures.push((i, e.to_string()));
            }
        }
    }
    Ok(CorrelationTable {
        config: *config,
        records,
        failures,
    })
}
