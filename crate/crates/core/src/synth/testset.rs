use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::GroundTruthCamera;
use super::render::render_with_rng;
use crate::calibrate::{fit_pose, FrameObservation, LmOptions};
use crate::error::{Error, Result};
use crate::geometry::{rotation, unproject, BoardGeometry, BoardPose};

pub const DEFAULT_TEST_FRAMES: usize = 50;
const TILT_RANGE_DEG: f64 = 60.0;
/// Board distance range in board widths.
const DISTANCE_RANGE: (f64, f64) = (1.5, 4.0);
/// Test frames with fewer visible corners are redrawn.
const MIN_TEST_CORNERS: usize = 20;
const MAX_DRAWS_PER_FRAME: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFrame {
    pub pose: BoardPose,
    pub observation: FrameObservation,
}

/// Held-out frames for measuring the estimation error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    pub frames: Vec<TestFrame>,
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Stratified sample of views covering the field of view.
///
/// Tilts are stratified over ±60° about an in-plane axis of random direction,
/// distances over 1.5–4 board widths, and board centers cycle through the four
/// image quadrants.
pub fn generate_test_set(
    cam: &GroundTruthCamera,
    board: &BoardGeometry,
    n: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<TestSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata = |rng: &mut ChaCha8Rng| {
        let mut v: Vec<f64> = (0..n).map(|k| (k as f64 + rng.gen::<f64>()) / n as f64).collect();
        v.shuffle(rng);
        v
    };
    let tilts = strata(&mut rng);
    let distances = strata(&mut rng);
    let (w, h) = (cam.image_size.w(), cam.image_size.h());

    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let mut draw = 0;
        loop {
            draw += 1;
            // first draw uses the strata, redraws fall back to plain uniform samples
            let (tu, du) = if draw == 1 {
                (tilts[k], distances[k])
            } else {
                (rng.gen(), rng.gen())
            };
            let tilt = (-TILT_RANGE_DEG + 2.0 * TILT_RANGE_DEG * tu).to_radians();
            let axis_dir = rng.gen_range(0.0..std::f64::consts::PI);
            let spin = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let r = rotation::rot_z(axis_dir)
                * rotation::rot_x(tilt)
                * rotation::rot_z(spin - axis_dir);
            let z = board.width() * (DISTANCE_RANGE.0 + (DISTANCE_RANGE.1 - DISTANCE_RANGE.0) * du);
            let (qx, qy) = (k % 2, (k / 2) % 2);
            let px = nalgebra::Point2::new(
                w * (qx as f64 + rng.gen_range(0.2..0.8)) / 2.0,
                h * (qy as f64 + rng.gen_range(0.2..0.8)) / 2.0,
            );
            let ray = unproject(&px, &cam.intrinsics)
                .ok_or_else(|| Error::Degenerate("test-set ray cannot be undistorted".into()))?;
            let pose = BoardPose::from_matrix(&r, nalgebra::Vector3::new(ray.x * z, ray.y * z, z));
            match render_with_rng(&pose, cam, board, noise_sigma, &mut rng) {
                Ok(obs) if obs.len() >= MIN_TEST_CORNERS => {
                    frames.push(TestFrame { pose, observation: obs });
                    break;
                }
                Ok(_) | Err(Error::NothingVisible) | Err(Error::BehindCamera { .. }) => {
                    if draw >= MAX_DRAWS_PER_FRAME {
                        return Err(Error::NoPlacement("could not draw a visible test frame".into()));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(TestSet { frames })
}

/// Held-out reprojection error of an intrinsic estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationError {
    /// Per-coordinate RMS in pixels.
    pub rms: f64,
    pub frames_used: usize,
    /// Frames whose pose fit failed and were excluded.
    pub failures: usize,
}

/// Estimation error of `c_est`: every test frame's pose is re-fit under the
/// fixed intrinsics, then the per-coordinate RMS reprojection error is taken
/// over all test corners. The score therefore reflects intrinsics only.
pub fn estimation_error(
    c_est: &crate::geometry::IntrinsicParams,
    test: &TestSet,
    board: &BoardGeometry,
    options: &LmOptions,
) -> Result<EstimationError> {
    if test.is_empty() {
        return Err(Error::Insufficient("empty test set".into()));
    }
    c_est.validate()?;
    let fits: Vec<_> = test
        .frames
        .par_iter()
        .map(|f| fit_pose(&f.observation, board, c_est, options))
        .collect();
    let (mut cost, mut points, mut used, mut failures) = (0.0, 0usize, 0usize, 0usize);
    for (i, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok(f) => {
                cost += f.cost;
                points += f.num_points;
                used += 1;
            }
            Err(e) => {
                log::warn!("test frame {i} excluded: {e}");
                failures += 1;
            }
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("no test frame could be fit".into()));
    }
    Ok(EstimationError {
        rms: (cost / (2 * points) as f64).sqrt(),
        frames_used: used,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poses::tilt_deg;

    #[test]
    fn test_set_covers_the_view() {
        let cam = GroundTruthCamera::webcam();
        let board = BoardGeometry::default();
        let t = generate_test_set(&cam, &board, DEFAULT_TEST_FRAMES, 0.0, 3).unwrap();
        assert_eq!(t.len(), 50);
        let tilts: Vec<f64> = t.frames.iter().map(|f| tilt_deg(&f.pose)).collect();
        let span = tilts.iter().cloned().fold(0.0, f64::max) - tilts.iter().cloned().fold(90.0, f64::min);
        // magnitudes over 0..60° of a signed ±60° range
        assert!(span >= 45.0, "{span}");
        let mut quadrants = [false; 4];
        for f in &t.frames {
            let c = crate::geometry::project(&nalgebra::Point3::origin(), &f.pose, &cam.intrinsics).unwrap();
            let q = (c.x > cam.image_size.w() / 2.0) as usize + 2 * (c.y > cam.image_size.h() / 2.0) as usize;
            quadrants[q] = true;
        }
        assert!(quadrants.iter().all(|&q| q));
    }

    #[test]
    fn generation_is_deterministic() {
        let cam = GroundTruthCamera::webcam();
        let board = BoardGeometry::default();
        let a = generate_test_set(&cam, &board, 10, 1.0, 5).unwrap();
        let b = generate_test_set(&cam, &board, 10, 1.0, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ground_truth_has_zero_error_on_clean_data() {
        let cam = GroundTruthCamera::webcam();
        let board = BoardGeometry::default();
        let t = generate_test_set(&cam, &board, 20, 0.0, 1).unwrap();
        let e = estimation_error(&cam.intrinsics, &t, &board, &LmOptions::default()).unwrap();
        assert!(e.rms < 1e-6, "{}", e.rms);
        assert_eq!(e.failures, 0);
    }

    #[test]
    fn ground_truth_error_is_the_noise_floor() {
        let cam = GroundTruthCamera::webcam();
        let board = BoardGeometry::default();
        let t = generate_test_set(&cam, &board, 50, 1.0, 2).unwrap();
        let e = estimation_error(&cam.intrinsics, &t, &board, &LmOptions::default()).unwrap();
        assert!((0.9..=1.1).contains(&e.rms), "{}", e.rms);
    }

    #[test]
    fn wrong_focal_length_scores_worse() {
        let cam = GroundTruthCamera::webcam();
        let board = BoardGeometry::default();
        let t = generate_test_set(&cam, &board, 20, 0.0, 4).unwrap();
        let mut bad = cam.intrinsics;
        bad.fx *= 1.1;
        let good = estimation_error(&cam.intrinsics, &t, &board, &LmOptions::default()).unwrap();
        let worse = estimation_error(&bad, &t, &board, &LmOptions::default()).unwrap();
        assert!(worse.rms > good.rms);
    }
}
