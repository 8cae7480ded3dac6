use nalgebra::{Point2, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::GroundTruthCamera;
use super::render::{derive_seed, render_observation};
use crate::calibrate::{estimate_homography, pose_from_homography, FrameObservation};
use crate::error::{Error, Result};
use crate::geometry::{rotation, unproject, BoardGeometry, BoardPose, IntrinsicParams};
use crate::poses::TargetPose;
use crate::session::{Phase, Session, SessionConfig, VerdictReason};

const RENDER_STREAM: u64 = 0x6775_6964;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidedConfig {
    pub session: SessionConfig,
    pub noise_sigma: f64,
    /// Frames handed to the session before giving up.
    pub max_submissions: usize,
}

impl Default for GuidedConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            noise_sigma: 1.0,
            max_submissions: 300,
        }
    }
}

/// Outcome of a session driven by the simulated user.
#[derive(Debug, Clone)]
pub struct GuidedRun {
    pub session: Session,
    pub camera: GroundTruthCamera,
    pub submissions: usize,
    pub rejections: usize,
}

impl GuidedRun {
    pub fn converged(&self) -> bool {
        self.session.phase() == Phase::Converged
    }

    pub fn keyframes(&self) -> &[FrameObservation] {
        self.session.keyframes()
    }
}

/// The arbitrary pose the simulated user starts with.
pub fn bootstrap_pose(board: &BoardGeometry) -> BoardPose {
    let r = rotation::rot_z(10f64.to_radians())
        * rotation::rot_x(25f64.to_radians())
        * rotation::rot_y((-15f64).to_radians());
    BoardPose::from_matrix(&r, Vector3::new(0.0, 0.0, 2.0 * board.width()))
}

/// Pose under the true camera whose outline lands on the target overlay,
/// i.e. what a user aligning the board with the drawn overlay ends up with.
pub fn pose_matching_overlay(
    target: &TargetPose,
    board: &BoardGeometry,
    truth: &IntrinsicParams,
) -> Result<BoardPose> {
    let mut corr = Vec::with_capacity(4);
    for (o, px) in board.outline().iter().zip(&target.overlay_polygon) {
        let n = unproject(px, truth)
            .ok_or_else(|| Error::Degenerate("overlay corner cannot be undistorted".into()))?;
        corr.push((Point2::new(o.x, o.y), Point2::new(n.x, n.y)));
    }
    let h = estimate_homography(&corr)?;
    pose_from_homography(&h, &IntrinsicParams::pinhole(1.0, 1.0, 0.0, 0.0))
}

/// Run a guided session with a simulated user who reproduces every target.
///
/// The user first shows the target pose itself; if the session does not
/// accept it (the overlay is drawn with the current estimate, not the true
/// camera) the user aligns the board with the overlay instead. The board is
/// held still, so each frame is submitted with itself as the previous frame.
pub fn run_guided_session(
    cam: &GroundTruthCamera,
    board: &BoardGeometry,
    config: &GuidedConfig,
    seed: u64,
) -> Result<GuidedRun> {
    let mut session = Session::new(board.clone(), cam.image_size, config.session)?;
    let mut submissions = 0;
    let mut rejections = 0;
    let mut aligned = false;
    while session.phase() != Phase::Converged && submissions < config.max_submissions {
        let pose = match session.current_target() {
            None => bootstrap_pose(board),
            Some(t) if aligned => pose_matching_overlay(t, board, &cam.intrinsics).unwrap_or(t.pose),
            Some(t) => t.pose,
        };
        let frame_seed = derive_seed(seed, RENDER_STREAM, submissions as u64);
        submissions += 1;
        let frame = match render_observation(&pose, cam, board, config.noise_sigma, frame_seed) {
            Ok(f) => f,
            Err(Error::NothingVisible) | Err(Error::BehindCamera { .. }) => {
                rejections += 1;
                aligned = !aligned;
                continue;
            }
            Err(e) => return Err(e),
        };
        let verdict = session.submit_frame(&frame, Some(&frame))?;
        if verdict.accepted {
            aligned = false;
        } else {
            rejections += 1;
            if matches!(verdict.reason, VerdictReason::PoseNotReached | VerdictReason::TooFewPoints) {
                aligned = !aligned;
            }
        }
    }
    Ok(GuidedRun {
        session,
        camera: *cam,
        submissions,
        rejections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_matching_pose_covers_the_overlay() {
        let board = BoardGeometry::default();
        let truth = GroundTruthCamera::webcam();
        let mut est = truth.intrinsics;
        est.fx *= 1.05;
        let t = crate::poses::pinhole_target(
            crate::geometry::Param::Fx,
            0,
            &board,
            &est,
            truth.image_size,
            &Default::default(),
        )
        .unwrap();
        let pose = pose_matching_overlay(&t, &board, &truth.intrinsics).unwrap();
        let seen = crate::geometry::project_outline(&board, &pose, &truth.intrinsics).unwrap();
        // a rigid board cannot match an overlay drawn with another focal length exactly
        let j = crate::session::polygon_jaccard(&seen, &t.overlay_polygon);
        assert!(j > 0.95, "{j}");
    }

    #[test]
    fn noise_free_session_converges_to_the_truth() {
        let board = BoardGeometry::default();
        let cam = GroundTruthCamera::webcam();
        let cfg = GuidedConfig {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let run = run_guided_session(&cam, &board, &cfg, 1).unwrap();
        assert!(run.converged(), "{:?}", run.session.snapshot().converged_mask);
        let est = run.session.estimate().unwrap().intrinsics.to_array();
        for (a, b) in est.iter().zip(cam.intrinsics.to_array()) {
            assert!((a - b).abs() < 1e-6 * b.abs().max(1e-3), "{a} vs {b}");
        }
    }
}
