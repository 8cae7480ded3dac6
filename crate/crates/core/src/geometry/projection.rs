use nalgebra::{Matrix2, Point2, Point3, SMatrix, Vector2};

use super::rotation;
use super::types::{BoardGeometry, BoardPose, IntrinsicParams, NUM_INTRINSICS};
use crate::error::{Error, Result};

/// Number of pose unknowns per frame (axis-angle + translation).
pub const POSE_DOF: usize = 6;

/// Derivatives of one projected pixel w.r.t. `[C (9), rotation (3), translation (3)]`.
pub type ProjectionJacobian = SMatrix<f64, 2, { NUM_INTRINSICS + POSE_DOF }>;

/// Apply radial and tangential distortion to a normalized image point.
pub fn distort(p: &Vector2<f64>, c: &IntrinsicParams) -> Vector2<f64> {
    let (x, y) = (p.x, p.y);
    let r2 = x * x + y * y;
    let radial = 1.0 + r2 * (c.k1 + r2 * (c.k2 + r2 * c.k3));
    Vector2::new(
        x * radial + 2.0 * c.p1 * x * y + c.p2 * (r2 + 2.0 * x * x),
        y * radial + c.p1 * (r2 + 2.0 * y * y) + 2.0 * c.p2 * x * y,
    )
}

/// Jacobian of [`distort`] w.r.t. the normalized input point.
pub fn distort_jacobian(p: &Vector2<f64>, c: &IntrinsicParams) -> Matrix2<f64> {
    let (x, y) = (p.x, p.y);
    let r2 = x * x + y * y;
    let radial = 1.0 + r2 * (c.k1 + r2 * (c.k2 + r2 * c.k3));
    let dradial = c.k1 + r2 * (2.0 * c.k2 + 3.0 * c.k3 * r2);
    let cross = 2.0 * x * y * dradial + 2.0 * c.p1 * x + 2.0 * c.p2 * y;
    Matrix2::new(
        radial + 2.0 * x * x * dradial + 2.0 * c.p1 * y + 6.0 * c.p2 * x,
        cross,
        cross,
        radial + 2.0 * y * y * dradial + 6.0 * c.p1 * y + 2.0 * c.p2 * x,
    )
}

/// Invert [`distort`] by Newton iteration.
///
/// Returns `None` when the iteration does not settle, which happens far
/// outside the region where the polynomial model is monotone.
pub fn undistort(pd: &Vector2<f64>, c: &IntrinsicParams) -> Option<Vector2<f64>> {
    if !c.has_distortion() {
        return Some(*pd);
    }
    let mut p = *pd;
    for _ in 0..50 {
        let f = distort(&p, c) - pd;
        if f.norm() < 1e-14 {
            return Some(p);
        }
        let step = distort_jacobian(&p, c).try_inverse()? * f;
        p -= step;
        if !p.x.is_finite() || !p.y.is_finite() {
            return None;
        }
    }
    ((distort(&p, c) - pd).norm() < 1e-9).then_some(p)
}

/// Pixel coordinates from normalized distorted coordinates.
pub fn to_pixel(pd: &Vector2<f64>, c: &IntrinsicParams) -> Point2<f64> {
    Point2::new(c.fx * pd.x + c.cx, c.fy * pd.y + c.cy)
}

/// Normalized (distorted) coordinates of a pixel.
pub fn to_normalized(px: &Point2<f64>, c: &IntrinsicParams) -> Vector2<f64> {
    Vector2::new((px.x - c.cx) / c.fx, (px.y - c.cy) / c.fy)
}

/// Undistorted normalized ray direction `(x, y)` for a pixel.
pub fn unproject(px: &Point2<f64>, c: &IntrinsicParams) -> Option<Vector2<f64>> {
    undistort(&to_normalized(px, c), c)
}

/// Project a point already expressed in camera coordinates.
pub fn project_camera_point(pc: &Point3<f64>, c: &IntrinsicParams) -> Result<Point2<f64>> {
    if pc.z <= 0.0 {
        return Err(Error::BehindCamera { depth: pc.z });
    }
    let n = Vector2::new(pc.x / pc.z, pc.y / pc.z);
    Ok(to_pixel(&distort(&n, c), c))
}

/// Project a board point into the image.
pub fn project(p: &Point3<f64>, pose: &BoardPose, c: &IntrinsicParams) -> Result<Point2<f64>> {
    project_camera_point(&pose.transform(p), c)
}

/// Project many board points, sharing the rotation matrix.
pub fn project_all(
    points: &[Point3<f64>],
    pose: &BoardPose,
    c: &IntrinsicParams,
) -> Result<Vec<Point2<f64>>> {
    let r = pose.rotation_matrix();
    points
        .iter()
        .map(|p| project_camera_point(&Point3::from(r * p.coords + pose.translation), c))
        .collect()
}

/// Projected outer board outline (4 pixel points, clockwise in image space).
pub fn project_outline(
    board: &BoardGeometry,
    pose: &BoardPose,
    c: &IntrinsicParams,
) -> Result<[Point2<f64>; 4]> {
    let outline = board.outline();
    let v = project_all(&outline, pose, c)?;
    Ok([v[0], v[1], v[2], v[3]])
}

/// Analytic Jacobian of the projected pixel w.r.t. intrinsics and pose.
///
/// Column order is `[fx, fy, cx, cy, k1, k2, k3, p1, p2, rx, ry, rz, tx, ty, tz]`.
/// Rotation columns are derivatives w.r.t. the additive axis-angle vector.
pub fn projection_jacobian(
    p: &Point3<f64>,
    pose: &BoardPose,
    c: &IntrinsicParams,
) -> Result<ProjectionJacobian> {
    let r = pose.rotation_matrix();
    let pc = r * p.coords + pose.translation;
    if pc.z <= 0.0 {
        return Err(Error::BehindCamera { depth: pc.z });
    }
    let iz = 1.0 / pc.z;
    let n = Vector2::new(pc.x * iz, pc.y * iz);
    let (x, y) = (n.x, n.y);
    let r2 = x * x + y * y;
    let r4 = r2 * r2;
    let r6 = r4 * r2;
    let d = distort(&n, c);

    let mut j = ProjectionJacobian::zeros();
    j[(0, 0)] = d.x;
    j[(1, 1)] = d.y;
    j[(0, 2)] = 1.0;
    j[(1, 3)] = 1.0;
    j[(0, 4)] = c.fx * x * r2;
    j[(1, 4)] = c.fy * y * r2;
    j[(0, 5)] = c.fx * x * r4;
    j[(1, 5)] = c.fy * y * r4;
    j[(0, 6)] = c.fx * x * r6;
    j[(1, 6)] = c.fy * y * r6;
    j[(0, 7)] = c.fx * 2.0 * x * y;
    j[(1, 7)] = c.fy * (r2 + 2.0 * y * y);
    j[(0, 8)] = c.fx * (r2 + 2.0 * x * x);
    j[(1, 8)] = c.fy * 2.0 * x * y;

    // pixel <- distorted <- normalized <- camera point
    let dd = distort_jacobian(&n, c);
    let k = Matrix2::new(c.fx, 0.0, 0.0, c.fy);
    let dn_dpc = SMatrix::<f64, 2, 3>::new(iz, 0.0, -x * iz, 0.0, iz, -y * iz);
    let dpix_dpc = k * dd * dn_dpc;

    let dpc_dw = -r * rotation::skew(&p.coords) * rotation::right_jacobian(&pose.rotation);
    j.fixed_view_mut::<2, 3>(0, 9)
        .copy_from(&(dpix_dpc * dpc_dw));
    j.fixed_view_mut::<2, 3>(0, 12).copy_from(&dpix_dpc);
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn cam() -> IntrinsicParams {
        IntrinsicParams::pinhole(1000.0, 1000.0, 640.0, 360.0)
    }

    fn axis_pose() -> BoardPose {
        BoardPose::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0))
    }

    #[test]
    fn distort_fixed_point_at_origin() {
        let c = IntrinsicParams::from_array([1.0, 1.0, 0.0, 0.0, 0.3, -0.2, 0.1, 0.05, -0.04]);
        assert_eq!(distort(&Vector2::zeros(), &c), Vector2::zeros());
    }

    #[test]
    fn distort_pure_k1() {
        let mut c = cam();
        c.k1 = -0.2;
        let d = distort(&Vector2::new(1.0, 0.0), &c);
        assert!((d - Vector2::new(0.8, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn distort_pure_p1() {
        let mut c = cam();
        c.p1 = 0.1;
        let d = distort(&Vector2::new(1.0, 1.0), &c);
        assert!((d - Vector2::new(1.2, 1.4)).norm() < 1e-15);
    }

    #[test]
    fn project_on_optical_axis() {
        let px = project(&Point3::origin(), &axis_pose(), &cam()).unwrap();
        assert_eq!(px, Point2::new(640.0, 360.0));
    }

    #[test]
    fn project_offset_point() {
        let px = project(&Point3::new(0.1, 0.0, 0.0), &axis_pose(), &cam()).unwrap();
        assert!((px - Point2::new(740.0, 360.0)).norm() < 1e-12);
    }

    #[test]
    fn project_with_radial_distortion() {
        let mut c = cam();
        c.k1 = -0.2;
        let px = project(&Point3::new(0.1, 0.0, 0.0), &axis_pose(), &c).unwrap();
        assert!((px - Point2::new(739.8, 360.0)).norm() < 1e-9);
    }

    #[test]
    fn project_behind_camera_is_an_error() {
        let pose = BoardPose::new(Vector3::zeros(), Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(
            project(&Point3::origin(), &pose, &cam()),
            Err(Error::BehindCamera { .. })
        ));
        assert!(projection_jacobian(&Point3::origin(), &pose, &cam()).is_err());
    }

    #[test]
    fn jacobian_principal_point_columns_are_unit() {
        let c = IntrinsicParams::from_array([900.0, 950.0, 600.0, 350.0, -0.1, 0.02, 0.0, 1e-3, -1e-3]);
        let pose = BoardPose::new(Vector3::new(0.2, -0.3, 0.1), Vector3::new(0.1, 0.05, 2.0));
        let j = projection_jacobian(&Point3::new(0.3, -0.1, 0.0), &pose, &c).unwrap();
        assert_eq!(j[(0, 2)], 1.0);
        assert_eq!(j[(1, 2)], 0.0);
        assert_eq!(j[(0, 3)], 0.0);
        assert_eq!(j[(1, 3)], 1.0);
    }

    #[test]
    fn jacobian_focal_column_on_axis() {
        let p = Point3::new(0.1, -0.05, 0.0);
        let pose = BoardPose::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 2.0));
        let j = projection_jacobian(&p, &pose, &cam()).unwrap();
        assert!((j[(0, 0)] - 0.05).abs() < 1e-15);
        assert!((j[(1, 1)] + 0.025).abs() < 1e-15);
    }

    #[test]
    fn undistort_inverts_distort() {
        let c = IntrinsicParams::from_array([1.0, 1.0, 0.0, 0.0, -0.25, 0.08, -0.01, 2e-3, -1e-3]);
        for &(x, y) in &[(0.0, 0.0), (0.3, -0.2), (-0.6, 0.35), (0.7, 0.4)] {
            let p = Vector2::new(x, y);
            let back = undistort(&distort(&p, &c), &c).unwrap();
            assert!((back - p).norm() < 1e-12, "({x}, {y})");
        }
    }

    #[test]
    fn zero_distortion_projection_is_scale_invariant() {
        let c = cam();
        let pc = Point3::new(0.2, -0.1, 1.5);
        let a = project_camera_point(&pc, &c).unwrap();
        let b = project_camera_point(&Point3::from(pc.coords * 3.7), &c).unwrap();
        assert!((a - b).norm() < 1e-9);
    }
}
