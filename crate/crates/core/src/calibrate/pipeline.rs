use serde::{Deserialize, Serialize};

use super::observation::FrameObservation;
use super::refine::{optimize, refine, CalibrationResult, LmOptions, ParamMask, ALL_FIXED, ALL_FREE};
use super::zhang::{frame_homography, init_intrinsics, initial_pose, pose_from_homography};
use crate::error::{Error, Result};
use crate::geometry::{BoardGeometry, BoardPose, ImageSize, IntrinsicParams, Param};

/// Full calibration from scratch: closed-form initialization from all frame
/// homographies followed by refinement of every parameter.
pub fn calibrate(
    frames: &[FrameObservation],
    board: &BoardGeometry,
    image_size: ImageSize,
    options: &LmOptions,
) -> Result<CalibrationResult> {
    let homographies = frames
        .iter()
        .map(|f| frame_homography(f, board))
        .collect::<Result<Vec<_>>>()?;
    let init = init_intrinsics(&homographies, image_size)?;
    let poses = homographies
        .iter()
        .map(|h| pose_from_homography(h, &init))
        .collect::<Result<Vec<_>>>()?;
    refine(frames, board, image_size, &init, &poses, &ALL_FREE, options)
}

/// Refinement warm-started from a previous estimate. Frames without an
/// initial pose get one from the current intrinsics.
pub fn calibrate_from(
    frames: &[FrameObservation],
    board: &BoardGeometry,
    image_size: ImageSize,
    initial: &IntrinsicParams,
    known_poses: &[Option<BoardPose>],
    options: &LmOptions,
) -> Result<CalibrationResult> {
    let poses = frames
        .iter()
        .enumerate()
        .map(|(i, f)| match known_poses.get(i).copied().flatten() {
            Some(p) => Ok(p),
            None => initial_pose(f, board, initial),
        })
        .collect::<Result<Vec<_>>>()?;
    refine(frames, board, image_size, initial, &poses, &ALL_FREE, options)
}

/// [`calibrate`], falling back to refinement from `guess` when the closed form
/// fails or yields unphysical intrinsics (noisy, nearly degenerate frame sets).
pub fn calibrate_or_refine(
    frames: &[FrameObservation],
    board: &BoardGeometry,
    image_size: ImageSize,
    guess: &IntrinsicParams,
    options: &LmOptions,
) -> Result<CalibrationResult> {
    match calibrate(frames, board, image_size, options) {
        Ok(r) if r.intrinsics.validate().is_ok() => Ok(r),
        _ => calibrate_from(frames, board, image_size, guess, &[], options),
    }
}

/// Board pose of one frame under fixed intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseFit {
    pub pose: BoardPose,
    /// Sum of squared residuals.
    pub cost: f64,
    pub num_points: usize,
}

/// Extrinsics-only refinement of a single frame.
pub fn fit_pose(
    frame: &FrameObservation,
    board: &BoardGeometry,
    c: &IntrinsicParams,
    options: &LmOptions,
) -> Result<PoseFit> {
    let init = initial_pose(frame, board, c)?;
    let opt = optimize(
        std::slice::from_ref(frame),
        board,
        c,
        &[init],
        &ALL_FIXED,
        options,
    )?;
    Ok(PoseFit {
        pose: opt.poses[0],
        cost: opt.cost,
        num_points: opt.num_points,
    })
}

/// Focal length estimate from a single frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEstimate {
    pub intrinsics: IntrinsicParams,
    /// The view does not separate focal length from board distance
    /// (e.g. a fronto-parallel board); the focal length is unreliable.
    pub low_confidence: bool,
}

/// Angle below which the bootstrap view counts as fronto-parallel.
const BOOTSTRAP_MIN_TILT_DEG: f64 = 5.0;

/// Single-frame calibration of the focal length.
///
/// The principal point is fixed at the image center and distortion at zero.
/// A closed-form focal length from the frame homography seeds a refinement of
/// `fx` and `fy` alone.
pub fn bootstrap_single_frame(
    frame: &FrameObservation,
    board: &BoardGeometry,
    image_size: ImageSize,
    options: &LmOptions,
) -> Result<BootstrapEstimate> {
    if frame.len() < 4 {
        return Err(Error::Insufficient(format!(
            "bootstrap needs 4 corners, got {}",
            frame.len()
        )));
    }
    let center = image_size.center();
    let h = frame_homography(frame, board)?;

    // shift to the principal point and scale pixels to order one
    let s = (image_size.w() + image_size.h()) / 2.0;
    let t = nalgebra::Matrix3::new(
        1.0 / s,
        0.0,
        -center.x / s,
        0.0,
        1.0 / s,
        -center.y / s,
        0.0,
        0.0,
        1.0,
    );
    let hn = t * h;
    let (h1, h2) = (hn.column(0), hn.column(1));
    // with K = diag(f, f, 1): a·(1/f²) + b = 0 for both orthogonality constraints
    let a1 = h1[0] * h2[0] + h1[1] * h2[1];
    let b1 = h1[2] * h2[2];
    let a2 = h1[0] * h1[0] + h1[1] * h1[1] - h2[0] * h2[0] - h2[1] * h2[1];
    let b2 = h1[2] * h1[2] - h2[2] * h2[2];
    let denom = a1 * a1 + a2 * a2;
    let scale = hn.fixed_view::<2, 2>(0, 0).norm_squared();
    let w = if denom > 1e-12 * scale * scale {
        -(a1 * b1 + a2 * b2) / denom
    } else {
        f64::NAN
    };
    let (f0, mut low_confidence) = if w > 0.0 && w.is_finite() {
        (s / w.sqrt(), false)
    } else {
        (image_size.w(), true)
    };

    let init = IntrinsicParams::pinhole(f0, f0, center.x, center.y);
    let pose = pose_from_homography(&h, &init)?;
    let mut fixed: ParamMask = [true; 9];
    fixed[Param::Fx.index()] = false;
    fixed[Param::Fy.index()] = false;
    let result = refine(
        std::slice::from_ref(frame),
        board,
        image_size,
        &init,
        &[pose],
        &fixed,
        options,
    )?;
    let tilt = result.poses[0].normal().z.clamp(-1.0, 1.0).acos().to_degrees();
    if result.rank_deficient || tilt < BOOTSTRAP_MIN_TILT_DEG {
        low_confidence = true;
    }
    if result.intrinsics.validate().is_err() {
        return Ok(BootstrapEstimate {
            intrinsics: init,
            low_confidence: true,
        });
    }
    Ok(BootstrapEstimate {
        intrinsics: result.intrinsics,
        low_confidence,
    })
}
