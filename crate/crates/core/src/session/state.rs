use serde::{Deserialize, Serialize};

use super::jaccard::jaccard_overlap;
use crate::calibrate::{
    bootstrap_single_frame, calibrate_from, calibrate_or_refine, fit_pose, CalibrationResult, FrameObservation,
    LmOptions,
};
use crate::error::{Error, Result};
use crate::geometry::{
    BoardGeometry, BoardPose, ImageSize, IntrinsicParams, Param, ParamGroup, DEFAULT_MAP_STRIDE,
    NUM_INTRINSICS,
};
use crate::poses::{init_targets, PoseConfig, TargetGroup, TargetPlanner, TargetPose, VisitedMask};

/// Unknowns contributed by the intrinsics and by each board pose.
const INTRINSIC_UNKNOWNS: usize = NUM_INTRINSICS;
const POSE_UNKNOWNS: usize = 6;
/// Constraints must exceed unknowns by this factor.
const CONSTRAINT_FACTOR: usize = 5;
/// Frames captured before the first full calibration.
const INIT_FRAMES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// A parameter converges once a same-group frame reduces its variance by
    /// less than this fraction.
    pub convergence_threshold: f64,
    /// Frames are accepted only if the overlap with the target exceeds this.
    pub jaccard_min: f64,
    /// Mean corner motion between consecutive frames must stay below this, in pixels.
    pub stillness_px: f64,
    pub map_stride: u32,
    pub poses: PoseConfig,
    pub lm: LmOptions,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            convergence_threshold: 0.1,
            jaccard_min: 0.8,
            stillness_px: 1.5,
            map_stride: DEFAULT_MAP_STRIDE,
            poses: PoseConfig::default(),
            lm: LmOptions::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        unit("convergence_threshold", self.convergence_threshold)?;
        unit("jaccard_min", self.jaccard_min)?;
        if !(self.stillness_px > 0.0) {
            return Err(Error::InvalidConfig("stillness_px must be positive".into()));
        }
        if self.map_stride == 0 {
            return Err(Error::InvalidConfig("map_stride must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    AwaitingBootstrap,
    AwaitingInit1,
    AwaitingInit2,
    Refining,
    Converged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictReason {
    PoseNotReached,
    NotStill,
    TooFewPoints,
    Accepted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameVerdict {
    pub accepted: bool,
    pub reason: VerdictReason,
    /// Overlap with the target; zero when no target was active.
    pub jaccard: f64,
}

impl FrameVerdict {
    fn rejected(reason: VerdictReason, jaccard: f64) -> Self {
        Self {
            accepted: false,
            reason,
            jaccard,
        }
    }
}

/// Uncertainty after one accepted keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRecord {
    pub keyframes: usize,
    pub group: TargetGroup,
    pub targeted_parameter: Option<Param>,
    pub intrinsics: IntrinsicParams,
    pub variances: [f64; NUM_INTRINSICS],
    pub iod: [f64; NUM_INTRINSICS],
    pub converged_mask: [bool; NUM_INTRINSICS],
}

/// Read-only view of a session for clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub phase: Phase,
    pub keyframes: usize,
    pub current_target: Option<TargetPose>,
    pub iod: [f64; NUM_INTRINSICS],
    pub converged_mask: [bool; NUM_INTRINSICS],
    pub estimate: Option<CalibrationResult>,
}

/// Corners a new frame must show so that constraints exceed unknowns fivefold.
pub fn min_points_required(frames_so_far: usize, is_init: bool) -> usize {
    if is_init {
        let unknowns = INTRINSIC_UNKNOWNS + POSE_UNKNOWNS * INIT_FRAMES;
        let correspondences = (CONSTRAINT_FACTOR * unknowns).div_ceil(2);
        correspondences.div_ceil(INIT_FRAMES)
    } else {
        // each added frame only adds its own pose
        let _ = frames_so_far;
        (CONSTRAINT_FACTOR * POSE_UNKNOWNS).div_ceil(2)
    }
}

/// Every corner of `current` was seen in `previous` and the mean motion is
/// below `threshold_px`.
pub fn is_still(current: &FrameObservation, previous: &FrameObservation, threshold_px: f64) -> bool {
    if current.is_empty() {
        return false;
    }
    let prev = previous.by_id();
    let mut total = 0.0;
    for p in &current.points {
        match prev.get(&p.id) {
            Some(q) => total += (p.pixel - q).norm(),
            None => return false,
        }
    }
    total / (current.len() as f64) < threshold_px
}

/// Variance ratio test: converged iff the relative reduction is below `threshold`.
pub fn convergence_step(sigma2_new: f64, sigma2_old: f64, threshold: f64) -> bool {
    if !(sigma2_old > 0.0) {
        return true;
    }
    1.0 - sigma2_new / sigma2_old < threshold
}

fn group_params(group: TargetGroup) -> Vec<Param> {
    match group {
        TargetGroup::Pinhole => Param::ALL
            .into_iter()
            .filter(|p| p.group() == ParamGroup::Pinhole)
            .collect(),
        TargetGroup::Distortion => Param::ALL
            .into_iter()
            .filter(|p| p.group() == ParamGroup::Distortion)
            .collect(),
        TargetGroup::Init => Vec::new(),
    }
}

/// Interactive calibration state machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    config: SessionConfig,
    board: BoardGeometry,
    image_size: ImageSize,
    phase: Phase,
    keyframes: Vec<FrameObservation>,
    /// Current intrinsic estimate; the focal prior before bootstrap.
    intrinsics: IntrinsicParams,
    estimate: Option<CalibrationResult>,
    init_targets: Option<[TargetPose; 2]>,
    current_target: Option<TargetPose>,
    converged: [bool; NUM_INTRINSICS],
    /// Variance at the previous keyframe of the parameter's own group.
    previous_variance: [f64; NUM_INTRINSICS],
    planner: TargetPlanner,
    history: Vec<KeyframeRecord>,
}

impl Session {
    pub fn new(board: BoardGeometry, image_size: ImageSize, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let center = image_size.center();
        let f = image_size.w();
        Ok(Self {
            config,
            board,
            image_size,
            phase: Phase::AwaitingBootstrap,
            keyframes: Vec::new(),
            intrinsics: IntrinsicParams::pinhole(f, f, center.x, center.y),
            estimate: None,
            init_targets: None,
            current_target: None,
            converged: [false; NUM_INTRINSICS],
            previous_variance: [0.0; NUM_INTRINSICS],
            planner: TargetPlanner::new(config.poses, config.map_stride),
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn board(&self) -> &BoardGeometry {
        &self.board
    }

    pub fn image_size(&self) -> ImageSize {
        self.image_size
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn keyframes(&self) -> &[FrameObservation] {
        &self.keyframes
    }

    pub fn intrinsics(&self) -> &IntrinsicParams {
        &self.intrinsics
    }

    pub fn estimate(&self) -> Option<&CalibrationResult> {
        self.estimate.as_ref()
    }

    pub fn current_target(&self) -> Option<&TargetPose> {
        self.current_target.as_ref()
    }

    pub fn converged_mask(&self) -> [bool; NUM_INTRINSICS] {
        self.converged
    }

    pub fn visited(&self) -> Option<&VisitedMask> {
        self.planner.visited()
    }

    pub fn history(&self) -> &[KeyframeRecord] {
        &self.history
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            phase: self.phase,
            keyframes: self.keyframes.len(),
            current_target: self.current_target.clone(),
            iod: self.estimate.as_ref().map_or([0.0; NUM_INTRINSICS], |e| e.iod),
            converged_mask: self.converged,
            estimate: self.estimate.clone(),
        }
    }

    fn points_required(&self) -> usize {
        match self.phase {
            Phase::AwaitingBootstrap => 4,
            Phase::AwaitingInit1 | Phase::AwaitingInit2 => {
                min_points_required(self.keyframes.len(), true)
            }
            Phase::Refining | Phase::Converged => min_points_required(self.keyframes.len(), false),
        }
    }

    /// Board pose of `frame` under the current estimate and its overlap with the target.
    pub fn frame_overlap(&self, frame: &FrameObservation) -> Option<(BoardPose, f64)> {
        let target = self.current_target.as_ref()?;
        let fit = fit_pose(frame, &self.board, &self.intrinsics, &self.config.lm).ok()?;
        let j = jaccard_overlap(target, &fit.pose, &self.board, &self.intrinsics);
        Some((fit.pose, j))
    }

    /// Process one detected frame.
    ///
    /// `previous` is the frame detected just before `frame`; without it the
    /// stillness gate fails. Gates are applied in order: point count,
    /// stillness, and overlap with the current target (after bootstrap).
    /// Rejections are verdicts; errors are reserved for invalid corner ids and
    /// numerical failures of the calibration itself, which leave the session
    /// unchanged.
    pub fn submit_frame(
        &mut self,
        frame: &FrameObservation,
        previous: Option<&FrameObservation>,
    ) -> Result<FrameVerdict> {
        frame.validate(&self.board)?;
        if self.phase == Phase::Converged {
            return Ok(FrameVerdict::rejected(VerdictReason::PoseNotReached, 0.0));
        }
        if frame.len() < self.points_required() {
            return Ok(FrameVerdict::rejected(VerdictReason::TooFewPoints, 0.0));
        }
        if !previous.is_some_and(|p| is_still(frame, p, self.config.stillness_px)) {
            return Ok(FrameVerdict::rejected(VerdictReason::NotStill, 0.0));
        }

        if self.phase == Phase::AwaitingBootstrap {
            let boot = bootstrap_single_frame(frame, &self.board, self.image_size, &self.config.lm)?;
            let targets = init_targets(&self.board, self.image_size, &boot.intrinsics, &self.config.poses)?;
            self.intrinsics = boot.intrinsics;
            self.current_target = Some(targets[0].clone());
            self.init_targets = Some(targets);
            self.phase = Phase::AwaitingInit1;
            return Ok(FrameVerdict {
                accepted: true,
                reason: VerdictReason::Accepted,
                jaccard: 0.0,
            });
        }

        let Some((pose, jaccard)) = self.frame_overlap(frame) else {
            return Ok(FrameVerdict::rejected(VerdictReason::PoseNotReached, 0.0));
        };
        if !(jaccard > self.config.jaccard_min) {
            return Ok(FrameVerdict::rejected(VerdictReason::PoseNotReached, jaccard));
        }

        let mut next = self.clone();
        next.accept(frame, pose)?;
        *self = next;
        Ok(FrameVerdict {
            accepted: true,
            reason: VerdictReason::Accepted,
            jaccard,
        })
    }

    fn accept(&mut self, frame: &FrameObservation, pose: BoardPose) -> Result<()> {
        let target = self
            .current_target
            .clone()
            .ok_or_else(|| Error::InvalidConfig("no active target".into()))?;
        self.keyframes.push(frame.clone());
        match self.phase {
            Phase::AwaitingInit1 => {
                self.phase = Phase::AwaitingInit2;
                self.current_target = self.init_targets.as_ref().map(|t| t[1].clone());
                Ok(())
            }
            Phase::AwaitingInit2 => {
                let result = calibrate_or_refine(
                    &self.keyframes,
                    &self.board,
                    self.image_size,
                    &self.intrinsics,
                    &self.config.lm,
                )?;
                self.previous_variance = result.variances;
                self.set_estimate(result, &target);
                self.phase = Phase::Refining;
                self.select_next_target()
            }
            Phase::Refining => {
                let est = self.estimate.as_ref().expect("estimate exists while refining");
                let mut known: Vec<Option<BoardPose>> = est.poses.iter().copied().map(Some).collect();
                known.push(Some(pose));
                let result = calibrate_from(
                    &self.keyframes,
                    &self.board,
                    self.image_size,
                    &est.intrinsics,
                    &known,
                    &self.config.lm,
                )?;
                for p in group_params(target.group) {
                    let i = p.index();
                    if !self.converged[i]
                        && convergence_step(
                            result.variances[i],
                            self.previous_variance[i],
                            self.config.convergence_threshold,
                        )
                    {
                        self.converged[i] = true;
                    }
                    self.previous_variance[i] = result.variances[i];
                }
                self.set_estimate(result, &target);
                if self.converged.iter().all(|&c| c) {
                    self.phase = Phase::Converged;
                    self.current_target = None;
                    Ok(())
                } else {
                    self.select_next_target()
                }
            }
            Phase::AwaitingBootstrap | Phase::Converged => unreachable!("handled by submit_frame"),
        }
    }

    fn set_estimate(&mut self, result: CalibrationResult, target: &TargetPose) {
        self.intrinsics = result.intrinsics;
        self.history.push(KeyframeRecord {
            keyframes: self.keyframes.len(),
            group: target.group,
            targeted_parameter: target.targeted_parameter,
            intrinsics: result.intrinsics,
            variances: result.variances,
            iod: result.iod,
            converged_mask: self.converged,
        });
        self.estimate = Some(result);
    }

    /// The unconverged parameter with the largest index of dispersion, ties
    /// to the lowest index.
    pub fn max_iod_parameter(&self) -> Option<Param> {
        self.max_iod_parameter_where(|_| true)
    }

    fn max_iod_parameter_where(&self, keep: impl Fn(Param) -> bool) -> Option<Param> {
        let iod = self.estimate.as_ref()?.iod;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..NUM_INTRINSICS {
            if self.converged[i] || Param::from_index(i).is_none_or(|p| !keep(p)) {
                continue;
            }
            if best.is_none_or(|(_, v)| iod[i] > v) {
                best = Some((i, iod[i]));
            }
        }
        best.and_then(|(i, _)| Param::from_index(i))
    }

    fn select_next_target(&mut self) -> Result<()> {
        let param = self
            .max_iod_parameter()
            .ok_or_else(|| Error::InvalidConfig("no unconverged parameter".into()))?;
        let target = match self.group_target(param) {
            // the estimate can leave one group without a placeable target;
            // the best unconverged parameter of the other group is used instead
            Err(Error::NoPlacement(reason)) => {
                log::warn!("no target for {param}: {reason}");
                let other = self
                    .max_iod_parameter_where(|p| p.group() != param.group())
                    .ok_or(Error::NoPlacement(reason))?;
                self.group_target(other)?
            }
            other => other?,
        };
        self.current_target = Some(target);
        Ok(())
    }

    fn group_target(&mut self, param: Param) -> Result<TargetPose> {
        match param.group() {
            ParamGroup::Pinhole => {
                let prior = self.estimate.as_ref().map_or(&[][..], |e| &e.poses[..]);
                self.planner
                    .pinhole(param, &self.board, &self.intrinsics, self.image_size, prior)
            }
            ParamGroup::Distortion => self.planner.distortion(&self.board, &self.intrinsics, self.image_size),
        }
    }
}
