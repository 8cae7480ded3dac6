//! Checks for board configurations under which pinhole parameters become
//! unobservable.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::BoardPose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SingularityTolerances {
    /// Board normal closer than this to the optical axis counts as parallel to
    /// the image plane.
    pub parallel_deg: f64,
    /// A projected board edge within this angle of an image axis counts as
    /// axis aligned.
    pub axis_deg: f64,
    /// Distance between unit vanishing lines below which two boards count as
    /// mirror images.
    pub reflection: f64,
}

impl Default for SingularityTolerances {
    fn default() -> Self {
        Self {
            parallel_deg: 5.0,
            axis_deg: 2.0,
            reflection: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SingularityReport {
    pub parallel_to_image_plane: bool,
    pub axis_aligned: bool,
    pub reflection_violation: bool,
    /// Indices of the prior poses that violate the reflection constraint.
    pub reflected_with: Vec<usize>,
}

impl SingularityReport {
    pub fn passes(&self) -> bool {
        !(self.parallel_to_image_plane || self.axis_aligned || self.reflection_violation)
    }
}

/// Angle between the board normal and the optical axis, in degrees.
pub fn tilt_deg(pose: &BoardPose) -> f64 {
    pose.normal().z.abs().clamp(0.0, 1.0).acos().to_degrees()
}

/// Image direction of a board axis through the board center, in normalized
/// coordinates.
fn projected_direction(pose: &BoardPose, axis: &Vector3<f64>) -> Vector2<f64> {
    let d = pose.rotation_matrix() * axis;
    let p = pose.translation;
    Vector2::new(d.x * p.z - p.x * d.z, d.y * p.z - p.y * d.z)
}

/// Smallest angle between a 2D direction and either image axis, in degrees.
fn angle_to_axes_deg(d: &Vector2<f64>) -> f64 {
    let a = d.y.atan2(d.x).to_degrees().rem_euclid(90.0);
    a.min(90.0 - a)
}

/// The vanishing line of the board plane in normalized image coordinates,
/// `(a, b, c)` with `a·x + b·y + c = 0`, is the unit plane normal.
fn vanishing_line(pose: &BoardPose) -> Vector3<f64> {
    pose.normal()
}

/// Distances of `other` to the reflections of `line` about the horizontal and
/// the vertical line through the principal point, up to line sign.
pub fn reflection_residuals(line: &Vector3<f64>, other: &Vector3<f64>) -> (f64, f64) {
    let dist = |m: Vector3<f64>| (m - other).norm().min((m + other).norm());
    (
        dist(Vector3::new(line.x, -line.y, line.z)),
        dist(Vector3::new(-line.x, line.y, line.z)),
    )
}

/// Whether two boards have vanishing lines that mirror each other about a
/// horizontal or a vertical image line.
pub fn violates_reflection(a: &BoardPose, b: &BoardPose, tol: &SingularityTolerances) -> bool {
    let (h, v) = reflection_residuals(&vanishing_line(a), &vanishing_line(b));
    h < tol.reflection || v < tol.reflection
}

pub fn check_singularities(
    pose: &BoardPose,
    prior_poses: &[BoardPose],
    tol: &SingularityTolerances,
) -> SingularityReport {
    let parallel_to_image_plane = tilt_deg(pose) < tol.parallel_deg;
    let axis_aligned = [Vector3::x(), Vector3::y()].iter().any(|axis| {
        let d = projected_direction(pose, axis);
        d.norm() > 0.0 && angle_to_axes_deg(&d) < tol.axis_deg
    });
    let reflected_with: Vec<usize> = prior_poses
        .iter()
        .enumerate()
        .filter(|(_, prior)| violates_reflection(pose, prior, tol))
        .map(|(i, _)| i)
        .collect();
    SingularityReport {
        parallel_to_image_plane,
        axis_aligned,
        reflection_violation: !reflected_with.is_empty(),
        reflected_with,
    }
}
