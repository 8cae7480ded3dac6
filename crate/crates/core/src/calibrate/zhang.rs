//! Closed-form steps of planar calibration: intrinsics from homographies and
//! board poses from a homography under known intrinsics.

use nalgebra::{DMatrix, Matrix3, Point2, Vector3};

use super::homography::estimate_homography;
use super::observation::FrameObservation;
use crate::error::{Error, Result};
use crate::geometry::{
    rotation, unproject, BoardGeometry, BoardPose, ImageSize, IntrinsicParams,
};

/// Relative singular-value gap below which the absolute-conic system is treated
/// as having more than one solution.
const CONIC_RANK_TOLERANCE: f64 = 1e-9;

/// Pixel-space normalization used to condition the absolute-conic system.
fn pixel_normalization(size: ImageSize) -> (Matrix3<f64>, f64, f64, f64) {
    let s = (size.w() + size.h()) / 2.0;
    let (cx, cy) = (size.w() / 2.0, size.h() / 2.0);
    let n = Matrix3::new(1.0 / s, 0.0, -cx / s, 0.0, 1.0 / s, -cy / s, 0.0, 0.0, 1.0);
    (n, s, cx, cy)
}

/// Homography from board plane coordinates to pixels.
pub fn frame_homography(frame: &FrameObservation, board: &BoardGeometry) -> Result<Matrix3<f64>> {
    let c: Vec<_> = frame
        .correspondences(board)
        .into_iter()
        .map(|(o, p)| (Point2::new(o.x, o.y), p))
        .collect();
    estimate_homography(&c)
}

/// Zero-skew absolute-conic constraint row for columns `i`, `j` of `h`, over
/// the unknowns `[B11, B22, B13, B23, B33]`.
fn conic_row(h: &Matrix3<f64>, i: usize, j: usize) -> [f64; 5] {
    let (a, b) = (h.column(i), h.column(j));
    [
        a[0] * b[0],
        a[1] * b[1],
        a[2] * b[0] + a[0] * b[2],
        a[2] * b[1] + a[1] * b[2],
        a[2] * b[2],
    ]
}

/// Relative size of the fourth singular value above which the principal point
/// is estimated; below it the views only determine the focal lengths.
const PRINCIPAL_POINT_CONDITION: f64 = 1e-3;

/// Closed-form pinhole intrinsics (zero skew) from at least two homographies.
///
/// Distortion coefficients of the result are zero. With zero skew every view
/// contributes two constraints, except fronto-parallel views which contribute
/// one. When the views do not determine the principal point (e.g. one tilted
/// and one fronto-parallel board) it is fixed at the image center and only the
/// focal lengths are solved for. `image_size` also conditions the system.
pub fn init_intrinsics(homographies: &[Matrix3<f64>], image_size: ImageSize) -> Result<IntrinsicParams> {
    if homographies.len() < 2 {
        return Err(Error::Insufficient(format!(
            "intrinsic initialization needs 2 views, got {}",
            homographies.len()
        )));
    }
    let (n, s, ncx, ncy) = pixel_normalization(image_size);
    let rows = (2 * homographies.len()).max(5);
    let mut v = DMatrix::<f64>::zeros(rows, 5);
    for (k, h) in homographies.iter().enumerate() {
        let mut hn = n * h;
        hn /= hn.norm();
        let r12 = conic_row(&hn, 0, 1);
        let r11 = conic_row(&hn, 0, 0);
        let r22 = conic_row(&hn, 1, 1);
        for c in 0..5 {
            v[(2 * k, c)] = r12[c];
            v[(2 * k + 1, c)] = r11[c] - r22[c];
        }
    }

    let (sv, null) = singular_system(&v)?;
    if sv[2] <= CONIC_RANK_TOLERANCE * sv[0] {
        return Err(Error::Degenerate(
            "views do not constrain the intrinsics (coplanar or fronto-parallel boards)".into(),
        ));
    }
    let b = if sv[3] > PRINCIPAL_POINT_CONDITION * sv[0] {
        null
    } else {
        // principal point at the origin of the normalized pixels: B13 = B23 = 0
        let reduced = v.select_columns(&[0, 1, 4]);
        let (rsv, rnull) = singular_system(&reduced)?;
        if rsv[1] <= CONIC_RANK_TOLERANCE * rsv[0] {
            return Err(Error::Degenerate("views do not constrain the focal lengths".into()));
        }
        nalgebra::DVector::from_vec(vec![rnull[0], rnull[1], 0.0, 0.0, rnull[2]])
    };
    let sign = if b[0] < 0.0 { -1.0 } else { 1.0 };
    let (b11, b22, b13, b23, b33) = (sign * b[0], sign * b[1], sign * b[2], sign * b[3], sign * b[4]);
    if !(b11 > 0.0 && b22 > 0.0) {
        return Err(Error::Degenerate("absolute conic is not positive definite".into()));
    }

    let u0 = -b13 / b11;
    let v0 = -b23 / b22;
    let lambda = b33 - b13 * b13 / b11 - b23 * b23 / b22;
    if !(lambda / b11 > 0.0) {
        return Err(Error::Degenerate("absolute conic is not positive definite".into()));
    }
    let alpha = (lambda / b11).sqrt();
    let beta = (lambda / b22).sqrt();

    let c = IntrinsicParams::pinhole(s * alpha, s * beta, s * u0 + ncx, s * v0 + ncy);
    c.validate()?;
    Ok(c)
}

/// Singular values in descending order and the right singular vector of the
/// smallest one.
fn singular_system(v: &DMatrix<f64>) -> Result<(Vec<f64>, nalgebra::DVector<f64>)> {
    let n = v.ncols();
    let mut padded = DMatrix::<f64>::zeros(v.nrows().max(n), n);
    padded.view_mut((0, 0), (v.nrows(), n)).copy_from(v);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let values = order.iter().map(|&i| sv[i]).collect();
    let null = v_t.row(order[n - 1]).transpose();
    Ok((values, null))
}

/// Board pose from a homography `H ≃ K [r1 r2 t]` under pinhole intrinsics.
///
/// Distortion in `c` is ignored. The sign of the solution is chosen so the
/// board lies in front of the camera and the rotation is orthonormalized.
pub fn pose_from_homography(h: &Matrix3<f64>, c: &IntrinsicParams) -> Result<BoardPose> {
    c.validate()?;
    let k_inv = c
        .camera_matrix()
        .try_inverse()
        .ok_or_else(|| Error::InvalidIntrinsics("singular camera matrix".into()))?;
    let m = k_inv * h;
    let (n1, n2) = (m.column(0).norm(), m.column(1).norm());
    if !(n1 > 0.0 && n2 > 0.0) || !n1.is_finite() || !n2.is_finite() {
        return Err(Error::Degenerate("homography has a null column".into()));
    }
    let mut lambda = 2.0 / (n1 + n2);
    if m[(2, 2)] * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1: Vector3<f64> = m.column(0) * lambda;
    let r2: Vector3<f64> = m.column(1) * lambda;
    let t: Vector3<f64> = m.column(2) * lambda;
    if !(t.z > 0.0) {
        return Err(Error::Degenerate("board origin does not lie in front of the camera".into()));
    }
    let r3 = r1.cross(&r2);
    let r = rotation::nearest_rotation(&Matrix3::from_columns(&[r1, r2, r3]));
    Ok(BoardPose::from_matrix(&r, t))
}

/// Initial board pose for a frame under known intrinsics (including distortion).
///
/// Pixels are undistorted to normalized coordinates first, so the closed form
/// is exact for noise-free data generated by the model. If the distortion
/// model cannot be inverted at some pixel, distortion is ignored for the
/// whole frame.
pub fn initial_pose(
    frame: &FrameObservation,
    board: &BoardGeometry,
    c: &IntrinsicParams,
) -> Result<BoardPose> {
    let normalized = |c: &IntrinsicParams| -> Option<Vec<(Point2<f64>, Point2<f64>)>> {
        frame
            .correspondences(board)
            .into_iter()
            .map(|(o, p)| unproject(&p, c).map(|n| (Point2::new(o.x, o.y), Point2::new(n.x, n.y))))
            .collect()
    };
    let corr = normalized(c)
        .or_else(|| normalized(&c.without_distortion()))
        .ok_or_else(|| Error::Degenerate("pixel cannot be normalized".into()))?;
    let h = estimate_homography(&corr)?;
    pose_from_homography(&h, &IntrinsicParams::pinhole(1.0, 1.0, 0.0, 0.0))
}
