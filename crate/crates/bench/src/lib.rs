//! Fixtures shared by the benchmarks.

use nalgebra::Vector3;

use posecal_core::calibrate::FrameObservation;
use posecal_core::geometry::rotation;
use posecal_core::synth::{render_observation, GroundTruthCamera};
use posecal_core::{BoardGeometry, BoardPose};

/// `n` views tilted in different directions, cycling through two depths.
pub fn spread_poses(board: &BoardGeometry, n: usize) -> Vec<BoardPose> {
    let center = Vector3::new(board.width() / 2.0, board.height() / 2.0, 0.0);
    (0..n)
        .map(|k| {
            let phi = k as f64 * 2.4;
            let r = rotation::rot_z(0.3 * phi.sin())
                * rotation::rot_x(0.6 * phi.cos())
                * rotation::rot_y(0.6 * phi.sin());
            let z = if k % 2 == 0 { 1.6 } else { 2.4 };
            BoardPose::from_matrix(&r, Vector3::new(0.0, 0.0, z) - r * center)
        })
        .collect()
}

pub fn render(poses: &[BoardPose], cam: &GroundTruthCamera, noise: f64) -> Vec<FrameObservation> {
    let board = BoardGeometry::default();
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| render_observation(p, cam, &board, noise, i as u64).expect("pose is visible"))
        .collect()
}
