use nalgebra::{DMatrix, Matrix3, Point2, SymmetricEigen, Matrix2};

use crate::error::{Error, Result};

/// Relative singular value below which a point set or the DLT system is
/// considered rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// Similarity transform moving the centroid to the origin with mean distance √2.
fn normalizing_transform(points: &[Point2<f64>]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| (p.x - cx).hypot(p.y - cy))
        .sum::<f64>()
        / n;
    if !(mean_dist > 0.0) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;

    // collinear sets have a rank-one scatter matrix
    let mut scatter = Matrix2::zeros();
    for p in points {
        let d = nalgebra::Vector2::new((p.x - cx) * s, (p.y - cy) * s);
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if lo <= RANK_TOLERANCE * hi {
        return Err(Error::Degenerate("points are collinear".into()));
    }

    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply(h: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    let v = h * nalgebra::Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}

/// Map a point through a homography.
pub fn transform_point(h: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    apply(h, p)
}

/// Normalized DLT homography mapping `src` to `dst`.
///
/// The result minimizes the algebraic error in Hartley-normalized coordinates
/// and is scaled so that `H[(2, 2)] = 1` whenever that entry is nonzero.
pub fn estimate_homography(correspondences: &[(Point2<f64>, Point2<f64>)]) -> Result<Matrix3<f64>> {
    if correspondences.len() < 4 {
        return Err(Error::Insufficient(format!(
            "homography needs 4 correspondences, got {}",
            correspondences.len()
        )));
    }
    let src: Vec<_> = correspondences.iter().map(|c| c.0).collect();
    let dst: Vec<_> = correspondences.iter().map(|c| c.1).collect();
    let ts = normalizing_transform(&src)?;
    let td = normalizing_transform(&dst)?;

    // pad to at least 9 rows so the thin SVD exposes the whole null space
    let rows = (2 * correspondences.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let s = apply(&ts, s);
        let d = apply(&td, d);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        a.row_mut(2 * i)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(2 * i + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[order.len() - 2]];
    if second_smallest <= RANK_TOLERANCE * largest {
        return Err(Error::Degenerate("homography is not unique".into()));
    }
    let h = v_t.row(order[order.len() - 1]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);

    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("singular normalization".into()))?;
    let mut hm = td_inv * hn * ts;
    let scale = hm[(2, 2)];
    if scale.abs() > f64::EPSILON * hm.norm() {
        hm /= scale;
    } else {
        hm /= hm.norm();
    }
    Ok(hm)
}
