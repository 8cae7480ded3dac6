//! Intersection over union of convex quadrilaterals.

use nalgebra::Point2;

use crate::geometry::{project_outline, BoardGeometry, BoardPose, IntrinsicParams};
use crate::poses::TargetPose;

/// Signed shoelace area, positive for counter-clockwise vertex order
/// (in a y-up frame).
pub fn signed_area(poly: &[Point2<f64>]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

fn cross(o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Whether the polygon is strictly convex with nonzero area.
pub fn is_convex(poly: &[Point2<f64>]) -> bool {
    let n = poly.len();
    if n < 3 || poly.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return false;
    }
    let mut sign = 0.0;
    for i in 0..n {
        let c = cross(&poly[i], &poly[(i + 1) % n], &poly[(i + 2) % n]);
        if c == 0.0 {
            return false;
        }
        if sign == 0.0 {
            sign = c.signum();
        } else if c.signum() != sign {
            return false;
        }
    }
    true
}

fn counter_clockwise(poly: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut v = poly.to_vec();
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    v
}

/// Intersection of two convex polygons by Sutherland–Hodgman clipping.
pub fn convex_intersection(subject: &[Point2<f64>], clip: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let clip = counter_clockwise(clip);
    let mut out = counter_clockwise(subject);
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (dp, dq) = (cross(&a, &b, &p), cross(&a, &b, &q));
            if dp >= 0.0 {
                out.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                out.push(p + (q - p) * t);
            }
        }
    }
    out
}

/// Jaccard index of two convex polygons; zero if either is degenerate.
pub fn polygon_jaccard(a: &[Point2<f64>], b: &[Point2<f64>]) -> f64 {
    if !is_convex(a) || !is_convex(b) {
        return 0.0;
    }
    let (area_a, area_b) = (signed_area(a).abs(), signed_area(b).abs());
    let inter = convex_intersection(a, b);
    let area_i = if inter.len() < 3 {
        0.0
    } else {
        signed_area(&inter).abs()
    };
    let union = area_a + area_b - area_i;
    if union <= 0.0 {
        0.0
    } else {
        (area_i / union).clamp(0.0, 1.0)
    }
}

/// Overlap between the target overlay and the board outline at the estimated
/// pose, both projected with `c_est`.
pub fn jaccard_overlap(
    target: &TargetPose,
    estimated_pose: &BoardPose,
    board: &BoardGeometry,
    c_est: &IntrinsicParams,
) -> f64 {
    match project_outline(board, estimated_pose, c_est) {
        Ok(e) => polygon_jaccard(&target.overlay_polygon, &e),
        Err(_) => 0.0,
    }
}
