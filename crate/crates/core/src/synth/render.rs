use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::camera::GroundTruthCamera;
use crate::calibrate::{CornerObservation, FrameObservation};
use crate::error::{Error, Result};
use crate::geometry::{project, BoardGeometry, BoardPose};

/// Mix a base seed with a stream tag and an index into an independent seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Detected corners of the board at `pose`, with isotropic Gaussian pixel noise.
///
/// Only corners whose exact projection lies inside the image are kept.
pub fn render_observation(
    pose: &BoardPose,
    cam: &GroundTruthCamera,
    board: &BoardGeometry,
    noise_sigma: f64,
    seed: u64,
) -> Result<FrameObservation> {
    render_with_rng(pose, cam, board, noise_sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn render_with_rng<R: Rng>(
    pose: &BoardPose,
    cam: &GroundTruthCamera,
    board: &BoardGeometry,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<FrameObservation> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise must be non-negative, got {noise_sigma}")));
    }
    let noise = Normal::new(0.0, noise_sigma).expect("valid std");
    let mut points = Vec::with_capacity(board.num_corners());
    for (id, p) in board.object_points().iter().enumerate() {
        let mut px = project(p, pose, &cam.intrinsics)?;
        if !cam.image_size.contains(&px) {
            continue;
        }
        if noise_sigma > 0.0 {
            px.x += noise.sample(rng);
            px.y += noise.sample(rng);
        }
        points.push(CornerObservation { id, pixel: px });
    }
    if points.is_empty() {
        return Err(Error::NothingVisible);
    }
    Ok(FrameObservation::new(points))
}
