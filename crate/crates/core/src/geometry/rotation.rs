//! Axis-angle helpers.

use nalgebra::{Matrix3, Rotation3, Vector3};

pub fn exp(w: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::from_scaled_axis(*w).into_inner()
}

/// Axis-angle vector of a rotation matrix. The input is projected onto SO(3)
/// first, so slightly non-orthogonal matrices are accepted.
pub fn log(r: &Matrix3<f64>) -> Vector3<f64> {
    let r = nearest_rotation(r);
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let s = v.norm();
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if theta < 1e-8 {
        return v;
    }
    if c > -0.9 {
        return v * (theta / s);
    }
    // near pi the antisymmetric part vanishes; take the axis from the symmetric part
    let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * c;
    let (k, _) = (0..3)
        .map(|i| (i, b[(i, i)]))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let mut axis: Vector3<f64> = b.column(k).into_owned();
    axis /= axis.norm();
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of SO(3): `exp(w + d) ≈ exp(w) · exp(Jr(w) d)`.
pub fn right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let k2 = k * k;
    let (a, b) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() - k * a + k2 * b
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), angle).into_inner()
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), angle).into_inner()
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), angle).into_inner()
}

/// Nearest rotation in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}
