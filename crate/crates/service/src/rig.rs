use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use posecal_core::calibrate::FrameObservation;
use posecal_core::geometry::project_outline;
use posecal_core::session::{FrameVerdict, Phase, Session, SessionConfig, SessionSnapshot};
use posecal_core::synth::{derive_seed, render_observation, sample_camera, GroundTruthCamera};
use posecal_core::{BoardGeometry, BoardPose, Error, IntrinsicParams, Result};

/// Stream tag for per-submission render noise.
pub const FRAME_STREAM: u64 = 0x7269_6766;

/// Parameters of a new session. Missing fields take their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    /// Seed for the hidden camera and every rendered frame.
    pub seed: u64,
    /// Pixel noise standard deviation of detected corners.
    pub noise: f64,
    /// Convergence threshold on the relative variance decrease.
    pub threshold: f64,
    /// Spread of the hidden camera around the nominal webcam.
    pub deviation: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            noise: 1.0,
            threshold: SessionConfig::default().convergence_threshold,
            deviation: 0.1,
        }
    }
}

impl RigConfig {
    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            convergence_threshold: self.threshold,
            ..SessionConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise must be finite and non-negative, got {}", self.noise)));
        }
        if !(self.deviation >= 0.0 && self.deviation.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "deviation must be finite and non-negative, got {}",
                self.deviation
            )));
        }
        self.session_config().validate()
    }
}

/// Hidden camera that renders board poses into detected corners.
///
/// Rendering depends only on the seed and the submission index, so a
/// replayed request trace reproduces every frame exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualRig {
    pub config: RigConfig,
    pub camera: GroundTruthCamera,
    pub board: BoardGeometry,
}

impl VirtualRig {
    pub fn new(config: RigConfig) -> Result<Self> {
        config.validate()?;
        let nominal = GroundTruthCamera::webcam();
        let camera = sample_camera(&nominal.intrinsics, nominal.image_size, config.deviation, config.seed)?;
        Ok(Self {
            config,
            camera,
            board: BoardGeometry::default(),
        })
    }

    pub fn render(&self, pose: &BoardPose, index: u64) -> Result<FrameObservation> {
        let seed = derive_seed(self.config.seed, FRAME_STREAM, index);
        render_observation(pose, &self.camera, &self.board, self.config.noise, seed)
    }
}

/// What a client needs to draw the next guidance step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSnapshot {
    pub phase: Phase,
    pub frames_captured: usize,
    /// Target outline under the current estimate, in pixels.
    pub target_overlay: Option<[Point2<f64>; 4]>,
    /// Outline of the last submitted board as the hidden camera sees it.
    pub board_polygon: Option<[Point2<f64>; 4]>,
    pub verdict: Option<FrameVerdict>,
    /// Incremented on every accepted frame.
    pub revision: u64,
    pub session: SessionSnapshot,
}

/// Ground truth and final estimate, available once a session has converged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reveal {
    pub truth: GroundTruthCamera,
    pub estimate: IntrinsicParams,
    pub keyframes: usize,
}

/// A session bound to its virtual camera.
#[derive(Debug, Clone)]
pub struct RigSession {
    rig: VirtualRig,
    session: Session,
    submissions: u64,
    revision: u64,
    last_verdict: Option<FrameVerdict>,
    last_polygon: Option<[Point2<f64>; 4]>,
}

impl RigSession {
    pub fn new(config: RigConfig) -> Result<Self> {
        let rig = VirtualRig::new(config)?;
        let session = Session::new(rig.board.clone(), rig.camera.image_size, config.session_config())?;
        Ok(Self {
            rig,
            session,
            submissions: 0,
            revision: 0,
            last_verdict: None,
            last_polygon: None,
        })
    }

    pub fn rig(&self) -> &VirtualRig {
        &self.rig
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn submissions(&self) -> u64 {
        self.submissions
    }

    /// Render `pose` and hand it to the session.
    ///
    /// The board is held at each submitted pose, so the frame is its own
    /// previous frame. Every call consumes one render index, including calls
    /// that fail; a failed call leaves the session unchanged.
    pub fn submit(&mut self, pose: &BoardPose) -> Result<(GuidanceSnapshot, bool)> {
        let index = self.submissions;
        self.submissions += 1;
        let frame = self.rig.render(pose, index)?;
        let verdict = self.session.submit_frame(&frame, Some(&frame))?;
        self.last_polygon = project_outline(&self.rig.board, pose, &self.rig.camera.intrinsics).ok();
        self.last_verdict = Some(verdict);
        if verdict.accepted {
            self.revision += 1;
        }
        Ok((self.snapshot(), verdict.accepted))
    }

    pub fn snapshot(&self) -> GuidanceSnapshot {
        GuidanceSnapshot {
            phase: self.session.phase(),
            frames_captured: self.session.keyframes().len(),
            target_overlay: self.session.current_target().map(|t| t.overlay_polygon),
            board_polygon: self.last_polygon,
            verdict: self.last_verdict,
            revision: self.revision,
            session: self.session.snapshot(),
        }
    }

    /// `None` until the session has converged.
    pub fn reveal(&self) -> Option<Reveal> {
        if self.session.phase() != Phase::Converged {
            return None;
        }
        Some(Reveal {
            truth: self.rig.camera,
            estimate: self.session.estimate()?.intrinsics,
            keyframes: self.session.keyframes().len(),
        })
    }
}
