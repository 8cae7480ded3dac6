use std::collections::VecDeque;

use nalgebra::{Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};

use super::singularity::{check_singularities, SingularityTolerances};
use super::subdivision::subdivision_fraction;
use crate::error::{Error, Result};
use crate::geometry::{
    project_outline, rotation, to_normalized, undistort, BoardGeometry, BoardPose, DistortionMap,
    ImageSize, IntrinsicParams, Param, ParamGroup, PixelRect,
};

/// Tunables of the pose generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseConfig {
    /// Pinhole tilts are interpolated over `(-tilt_range_deg, tilt_range_deg)`.
    pub tilt_range_deg: f64,
    /// Interpolated tilts closer to zero are pushed out to this magnitude so
    /// that no pinhole target is parallel to the image plane.
    pub min_tilt_deg: f64,
    pub in_plane_rotation_deg: f64,
    /// Shift of principal-point targets as a fraction of the image size.
    pub principal_shift: f64,
    /// Inset of the image, as a fraction of its size, that pinhole targets
    /// must fit into.
    pub visibility_margin: f64,
    /// Projected board width of distortion targets as a fraction of the image width.
    pub distortion_board_width: f64,
    /// Fraction of the unvisited map maximum that counts as strongly distorted.
    pub distortion_threshold: f64,
    pub init_tilt_deg: f64,
    pub tolerances: SingularityTolerances,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            tilt_range_deg: 70.0,
            min_tilt_deg: 10.0,
            in_plane_rotation_deg: 22.5,
            principal_shift: 0.05,
            visibility_margin: 0.05,
            distortion_board_width: 0.33,
            distortion_threshold: 0.8,
            init_tilt_deg: 45.0,
            tolerances: SingularityTolerances::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetGroup {
    Pinhole,
    Distortion,
    Init,
}

impl From<ParamGroup> for TargetGroup {
    fn from(g: ParamGroup) -> Self {
        match g {
            ParamGroup::Pinhole => TargetGroup::Pinhole,
            ParamGroup::Distortion => TargetGroup::Distortion,
        }
    }
}

/// A pose the user is asked to reproduce, with its guidance overlay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPose {
    pub pose: BoardPose,
    pub group: TargetGroup,
    pub targeted_parameter: Option<Param>,
    /// Projected outer board corners under the intrinsics the target was
    /// generated with.
    pub overlay_polygon: [Point2<f64>; 4],
}

/// Map cells already used for distortion targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitedMask {
    pub cols: usize,
    pub rows: usize,
    bits: Vec<bool>,
}

impl VisitedMask {
    pub fn new(cols: usize, rows: usize) -> Self {
        Self {
            cols,
            rows,
            bits: vec![false; cols * rows],
        }
    }

    pub fn for_map(map: &DistortionMap) -> Self {
        Self::new(map.cols, map.rows)
    }

    pub fn is_set(&self, col: usize, row: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// Set every cell of the inclusive rectangle.
    pub fn mark(&mut self, col0: usize, row0: usize, col1: usize, row1: usize) {
        for r in row0..=row1 {
            for c in col0..=col1 {
                self.bits[r * self.cols + c] = true;
            }
        }
    }

    /// Every bit set in `self` is also set in `later`.
    pub fn is_subset_of(&self, later: &VisitedMask) -> bool {
        self.bits.len() == later.bits.len()
            && self.bits.iter().zip(&later.bits).all(|(&a, &b)| !a || b)
    }
}

/// Tilt axis used to constrain a pinhole parameter: `x` for the vertical
/// parameters, `y` for the horizontal ones.
fn tilt_rotation(param: Param, angle: f64) -> Matrix3<f64> {
    match param {
        Param::Fy | Param::Cy => rotation::rot_x(angle),
        _ => rotation::rot_y(angle),
    }
}

/// Signed tilt in degrees for a subdivision step.
pub fn pinhole_tilt_deg(step: usize, config: &PoseConfig) -> f64 {
    let f = subdivision_fraction(step);
    let tilt = -config.tilt_range_deg + 2.0 * config.tilt_range_deg * f;
    if tilt.abs() < config.min_tilt_deg {
        config.min_tilt_deg.copysign(tilt)
    } else {
        tilt
    }
}

fn inset(size: ImageSize, margin: f64) -> PixelRect {
    PixelRect {
        x0: margin * size.w(),
        y0: margin * size.h(),
        x1: (1.0 - margin) * size.w(),
        y1: (1.0 - margin) * size.h(),
    }
}

fn outline_inside(
    board: &BoardGeometry,
    pose: &BoardPose,
    c: &IntrinsicParams,
    rect: &PixelRect,
) -> bool {
    let Ok(poly) = project_outline(board, pose, c) else {
        return false;
    };
    // far outside the image the distortion polynomial can fold points back in;
    // the ideal projection must also be reasonably close to the image
    let Ok(ideal) = project_outline(board, pose, &c.without_distortion()) else {
        return false;
    };
    let slack_x = rect.x1 - rect.x0;
    let slack_y = rect.y1 - rect.y0;
    poly.iter()
        .all(|p| p.x >= rect.x0 && p.x <= rect.x1 && p.y >= rect.y0 && p.y <= rect.y1)
        && ideal.iter().all(|p| {
            p.x >= rect.x0 - slack_x
                && p.x <= rect.x1 + slack_x
                && p.y >= rect.y0 - slack_y
                && p.y <= rect.y1 + slack_y
        })
}

/// Closest distance along the viewing ray through `center_px` at which the
/// rotated board fits into `rect`.
fn fit_distance(
    board: &BoardGeometry,
    r: &Matrix3<f64>,
    center_px: &Point2<f64>,
    c: &IntrinsicParams,
    rect: &PixelRect,
) -> Result<BoardPose> {
    let ray = undistort(&to_normalized(center_px, c), c)
        .ok_or_else(|| Error::NoPlacement("target center cannot be undistorted".into()))?;
    let pose_at = |z: f64| BoardPose::from_matrix(r, Vector3::new(ray.x * z, ray.y * z, z));

    let mut hi = board.width().max(board.height());
    let mut tries = 0;
    while !outline_inside(board, &pose_at(hi), c, rect) {
        hi *= 2.0;
        tries += 1;
        if tries > 30 {
            return Err(Error::NoPlacement("board does not fit at any distance".into()));
        }
    }
    let mut lo = 1e-3 * hi;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if outline_inside(board, &pose_at(mid), c, rect) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(pose_at(hi))
}

fn target(
    pose: BoardPose,
    group: TargetGroup,
    targeted_parameter: Option<Param>,
    board: &BoardGeometry,
    c: &IntrinsicParams,
) -> Result<TargetPose> {
    let overlay_polygon = project_outline(board, &pose, c)?;
    // a folded overlay cannot be matched by any board position
    if !crate::session::is_convex(&overlay_polygon) {
        return Err(Error::NoPlacement("target overlay is not a convex quadrilateral".into()));
    }
    Ok(TargetPose {
        pose,
        group,
        targeted_parameter,
        overlay_polygon,
    })
}

/// Target pose constraining one of `fx, fy, cx, cy`.
///
/// The board is tilted about the parameter's axis by the subdivision angle of
/// `step`, rotated in-plane, and moved as close as possible while staying in
/// the inset image. Principal-point targets are additionally shifted along
/// their axis, alternating direction with `step`.
pub fn pinhole_target(
    param: Param,
    step: usize,
    board: &BoardGeometry,
    c_est: &IntrinsicParams,
    image_size: ImageSize,
    config: &PoseConfig,
) -> Result<TargetPose> {
    if param.group() != ParamGroup::Pinhole {
        return Err(Error::InvalidConfig(format!("{param} is not a pinhole parameter")));
    }
    c_est.validate()?;
    let tilt = pinhole_tilt_deg(step, config).to_radians();
    let r = rotation::rot_z(config.in_plane_rotation_deg.to_radians()) * tilt_rotation(param, tilt);

    let sign = if step % 2 == 0 { 1.0 } else { -1.0 };
    let mut center = image_size.center();
    match param {
        Param::Cx => center.x += sign * config.principal_shift * image_size.w(),
        Param::Cy => center.y += sign * config.principal_shift * image_size.h(),
        _ => {}
    }
    let pose = fit_distance(board, &r, &center, c_est, &inset(image_size, config.visibility_margin))?;
    let t = target(pose, TargetGroup::Pinhole, Some(param), board, c_est)?;
    debug_assert!(check_singularities(&t.pose, &[], &config.tolerances).passes());
    Ok(t)
}

/// Labelled 4-connected components of the cells passing `keep`, largest
/// first, ties broken by the topmost then leftmost bounding-box corner.
/// Each entry is `(area, col0, row0, col1, row1)`.
fn components(
    cols: usize,
    rows: usize,
    keep: impl Fn(usize, usize) -> bool,
) -> Vec<(usize, usize, usize, usize, usize)> {
    let mut seen = vec![false; cols * rows];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for r0 in 0..rows {
        for c0 in 0..cols {
            if seen[r0 * cols + c0] || !keep(c0, r0) {
                continue;
            }
            seen[r0 * cols + c0] = true;
            queue.push_back((c0, r0));
            let (mut area, mut bc0, mut br0, mut bc1, mut br1) = (0, c0, r0, c0, r0);
            while let Some((c, r)) = queue.pop_front() {
                area += 1;
                bc0 = bc0.min(c);
                br0 = br0.min(r);
                bc1 = bc1.max(c);
                br1 = br1.max(r);
                let mut visit = |nc: usize, nr: usize| {
                    if !seen[nr * cols + nc] && keep(nc, nr) {
                        seen[nr * cols + nc] = true;
                        queue.push_back((nc, nr));
                    }
                };
                if c > 0 {
                    visit(c - 1, r);
                }
                if c + 1 < cols {
                    visit(c + 1, r);
                }
                if r > 0 {
                    visit(c, r - 1);
                }
                if r + 1 < rows {
                    visit(c, r + 1);
                }
            }
            out.push((area, bc0, br0, bc1, br1));
        }
    }
    out.sort_by(|a, b| b.0.cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    out
}

const PLACEMENT_MARGIN_PX: f64 = 0.5;

/// Fronto-parallel pose whose projection starts at `top_left` and spans
/// `width_fraction` of the image width, moved back inside the image if needed.
fn place_fronto_parallel(
    board: &BoardGeometry,
    top_left: Point2<f64>,
    width_fraction: f64,
    c: &IntrinsicParams,
    image_size: ImageSize,
) -> Result<BoardPose> {
    // keep the nominal footprint inside the image so distortion is only
    // evaluated where it is modelled
    let target_width = width_fraction * image_size.w();
    let target_height = target_width * board.height() / board.width();
    let top_left = Point2::new(
        top_left.x.clamp(0.0, (image_size.w() - target_width).max(0.0)),
        top_left.y.clamp(0.0, (image_size.h() - target_height).max(0.0)),
    );
    // a poorly constrained estimate can fold over near the image corners;
    // the distorted ray is close enough there since placement is refined below
    let nd = to_normalized(&top_left, c);
    let n = undistort(&nd, c).unwrap_or(nd);
    let anchored = |z: f64| {
        Vector3::new(
            n.x * z + board.width() / 2.0,
            n.y * z + board.height() / 2.0,
            z,
        )
    };
    // distortion changes the projected width, so the pinhole distance is only a start
    let mut z = c.fx * board.width() / target_width;
    for _ in 0..50 {
        let poly = project_outline(board, &BoardPose::new(Vector3::zeros(), anchored(z)), c)?;
        let ratio = (poly[1].x - poly[0].x) / target_width;
        if !(ratio > 0.5 && ratio < 2.0) {
            z = c.fx * board.width() / target_width;
            break;
        }
        z *= ratio;
        if (ratio - 1.0).abs() < 1e-12 {
            break;
        }
    }
    let mut t = anchored(z);
    for _ in 0..20 {
        let pose = BoardPose::new(Vector3::zeros(), t);
        let poly = project_outline(board, &pose, c)?;
        if poly.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            break;
        }
        let min_x = poly.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let max_x = poly.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let min_y = poly.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let max_y = poly.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        if min_x >= 0.0 && max_x <= image_size.w() && min_y >= 0.0 && max_y <= image_size.h() {
            return Ok(pose);
        }
        // aim a little inside the border so coupling between axes cannot push it back out
        let dx = if min_x < 0.0 {
            PLACEMENT_MARGIN_PX - min_x
        } else if max_x > image_size.w() {
            image_size.w() - PLACEMENT_MARGIN_PX - max_x
        } else {
            0.0
        };
        let dy = if min_y < 0.0 {
            PLACEMENT_MARGIN_PX - min_y
        } else if max_y > image_size.h() {
            image_size.h() - PLACEMENT_MARGIN_PX - max_y
        } else {
            0.0
        };
        // corrections larger than the image mean the model has folded over
        if dx.abs() > image_size.w() || dy.abs() > image_size.h() {
            break;
        }
        t.x += dx * z / c.fx;
        t.y += dy * z / c.fy;
    }
    Err(Error::NoPlacement("distortion target does not fit inside the image".into()))
}

/// Result of a distortion-region search.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionTarget {
    pub target: TargetPose,
    pub visited: VisitedMask,
    /// Bounding box of the selected region, in pixels.
    pub region: PixelRect,
}

/// Target pose sampling the most distorted region not visited yet.
///
/// The unvisited map is thresholded at `distortion_threshold` of its maximum,
/// the largest connected region is boxed, the box is marked visited, and a
/// fronto-parallel board is placed with its projected top-left corner on the
/// box's top-left corner. Regions where no valid board placement exists are
/// marked visited and skipped.
pub fn distortion_target(
    map: &DistortionMap,
    visited: &VisitedMask,
    board: &BoardGeometry,
    c_est: &IntrinsicParams,
    image_size: ImageSize,
    config: &PoseConfig,
) -> Result<DistortionTarget> {
    if visited.cols != map.cols || visited.rows != map.rows {
        return Err(Error::InvalidConfig("visited mask does not match the map".into()));
    }
    if visited.is_full() {
        return Err(Error::MapExhausted);
    }
    let max = (0..map.rows)
        .flat_map(|r| (0..map.cols).map(move |c| (c, r)))
        .filter(|&(c, r)| !visited.is_set(c, r))
        .map(|(c, r)| map.value(c, r))
        .fold(0.0, f64::max);
    let threshold = config.distortion_threshold * max;
    let comps = components(map.cols, map.rows, |c, r| {
        !visited.is_set(c, r) && map.value(c, r) >= threshold
    });
    if comps.is_empty() {
        return Err(Error::MapExhausted);
    }

    let mut next = visited.clone();
    for &(_, c0, r0, c1, r1) in &comps {
        next.mark(c0, r0, c1, r1);
        let region = map.cells_rect(c0, r0, c1, r1);
        let placed = place_fronto_parallel(
            board,
            Point2::new(region.x0, region.y0),
            config.distortion_board_width,
            c_est,
            image_size,
        )
        .and_then(|pose| target(pose, TargetGroup::Distortion, None, board, c_est));
        match placed {
            Ok(target) => {
                return Ok(DistortionTarget {
                    target,
                    visited: next,
                    region,
                })
            }
            // regions where the estimate folds over are skipped
            Err(Error::NoPlacement(reason)) => log::debug!("skipping distortion region: {reason}"),
            Err(e) => return Err(e),
        }
    }
    distortion_target(map, &next, board, c_est, image_size, config)
}

/// The two initialization targets: a 45° tilt about `x` with the in-plane
/// rotation, and a fronto-parallel board covering the whole view.
pub fn init_targets(
    board: &BoardGeometry,
    image_size: ImageSize,
    c_guess: &IntrinsicParams,
    config: &PoseConfig,
) -> Result<[TargetPose; 2]> {
    c_guess.validate()?;
    let r = rotation::rot_z(config.in_plane_rotation_deg.to_radians())
        * rotation::rot_x(config.init_tilt_deg.to_radians());
    let tilted = fit_distance(
        board,
        &r,
        &image_size.center(),
        c_guess,
        &inset(image_size, config.visibility_margin),
    )?;

    // the board spans the full image in both directions
    let z = (c_guess.fx * board.width() / image_size.w()).min(c_guess.fy * board.height() / image_size.h());
    let ray = undistort(&to_normalized(&image_size.center(), c_guess), c_guess)
        .ok_or_else(|| Error::NoPlacement("image center cannot be undistorted".into()))?;
    let fronto = BoardPose::new(Vector3::zeros(), Vector3::new(ray.x * z, ray.y * z, z));

    Ok([
        target(tilted, TargetGroup::Init, None, board, c_guess)?,
        target(fronto, TargetGroup::Init, None, board, c_guess)?,
    ])
}
