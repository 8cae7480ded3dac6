use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImageSize, IntrinsicParams, NUM_INTRINSICS};

const MAX_SAMPLE_ATTEMPTS: usize = 100;

/// A simulated camera whose intrinsics are known exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthCamera {
    pub intrinsics: IntrinsicParams,
    pub image_size: ImageSize,
}

impl GroundTruthCamera {
    /// Webcam-like default: 1280×720, f = 1000, mild barrel distortion.
    pub fn webcam() -> Self {
        Self {
            intrinsics: IntrinsicParams::from_array([1000.0, 1000.0, 640.0, 360.0, -0.1, 0.03, 0.0, 0.001, 0.001]),
            image_size: ImageSize::new(1280, 720),
        }
    }

    fn is_physical(&self) -> bool {
        let c = &self.intrinsics;
        c.fx > 0.0 && c.fy > 0.0 && self.image_size.contains(&nalgebra::Point2::new(c.cx, c.cy))
    }
}

/// Draw intrinsics from `N(C, diag(deviation · |C|))`.
///
/// Each parameter's variance is `deviation` times its magnitude, so zero
/// parameters stay zero. Draws with non-positive focal lengths or a principal
/// point outside the image are repeated.
pub fn sample_camera(
    c_real: &IntrinsicParams,
    image_size: ImageSize,
    deviation: f64,
    seed: u64,
) -> Result<GroundTruthCamera> {
    if !(deviation >= 0.0) || !deviation.is_finite() {
        return Err(Error::InvalidConfig(format!("deviation must be non-negative, got {deviation}")));
    }
    let base = c_real.to_array();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let mut a = [0.0; NUM_INTRINSICS];
        for i in 0..NUM_INTRINSICS {
            let sd = (deviation * base[i].abs()).sqrt();
            a[i] = if sd > 0.0 {
                Normal::new(base[i], sd).expect("finite std").sample(&mut rng)
            } else {
                base[i]
            };
        }
        let cam = GroundTruthCamera {
            intrinsics: IntrinsicParams::from_array(a),
            image_size,
        };
        if cam.is_physical() {
            return Ok(cam);
        }
    }
    Err(Error::InvalidConfig(format!(
        "no physical camera after {MAX_SAMPLE_ATTEMPTS} draws at deviation {deviation}"
    )))
}
