//! Levenberg–Marquardt minimization of the reprojection error over intrinsics
//! and board poses, and the covariance of the resulting estimate.

use nalgebra::{DMatrix, DVector, Point3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::observation::FrameObservation;
use crate::error::{Error, Result};
use crate::geometry::{
    project_camera_point, projection_jacobian, BoardGeometry, BoardPose, ImageSize,
    IntrinsicParams, NUM_INTRINSICS, POSE_DOF,
};

/// `true` marks a parameter that is held fixed.
pub type ParamMask = [bool; NUM_INTRINSICS];

pub const ALL_FREE: ParamMask = [false; NUM_INTRINSICS];
pub const ALL_FIXED: ParamMask = [true; NUM_INTRINSICS];

/// Eigenvalues of the equilibrated normal matrix below this fraction of the
/// largest one are dropped from the pseudo-inverse.
pub const PINV_RELATIVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmOptions {
    pub initial_lambda: f64,
    pub lambda_factor: f64,
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
    pub step_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-3,
            lambda_factor: 10.0,
            max_iterations: 100,
            cost_tolerance: 1e-12,
            step_tolerance: 1e-12,
        }
    }
}

/// Estimated intrinsics, per-frame poses and their uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub intrinsics: IntrinsicParams,
    pub image_size: ImageSize,
    pub poses: Vec<BoardPose>,
    /// Per-coordinate RMS of the reprojection residuals, in pixels.
    pub residual_rms: f64,
    pub variances: [f64; NUM_INTRINSICS],
    pub iod: [f64; NUM_INTRINSICS],
    pub rank_deficient: bool,
    /// `false` when the optimizer hit its iteration limit.
    #[serde(skip, default = "default_true")]
    pub converged: bool,
}

fn default_true() -> bool {
    true
}

/// Diagonal of the intrinsic block of the pseudo-inverted normal matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceEstimate {
    pub variances: [f64; NUM_INTRINSICS],
    pub rank_deficient: bool,
}

/// Output of the bare optimizer.
#[derive(Debug, Clone)]
pub struct Optimized {
    pub intrinsics: IntrinsicParams,
    pub poses: Vec<BoardPose>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub num_points: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl Optimized {
    pub fn residual_rms(&self) -> f64 {
        if self.num_points == 0 {
            0.0
        } else {
            (self.cost / (2 * self.num_points) as f64).sqrt()
        }
    }
}

struct Problem {
    frames: Vec<Vec<(Point3<f64>, nalgebra::Point2<f64>)>>,
    free: Vec<usize>,
}

impl Problem {
    fn new(frames: &[FrameObservation], board: &BoardGeometry, fixed: &ParamMask) -> Result<Self> {
        for f in frames {
            f.validate(board)?;
        }
        Ok(Self {
            frames: frames.iter().map(|f| f.correspondences(board)).collect(),
            free: (0..NUM_INTRINSICS).filter(|&i| !fixed[i]).collect(),
        })
    }

    fn num_points(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    fn dim(&self) -> usize {
        self.free.len() + POSE_DOF * self.frames.len()
    }

    fn cost(&self, c: &IntrinsicParams, poses: &[BoardPose]) -> Option<f64> {
        let mut cost = 0.0;
        for (obs, pose) in self.frames.iter().zip(poses) {
            let r = pose.rotation_matrix();
            for (p, px) in obs {
                let pc = Point3::from(r * p.coords + pose.translation);
                let proj = project_camera_point(&pc, c).ok()?;
                cost += (proj - px).norm_squared();
            }
        }
        cost.is_finite().then_some(cost)
    }

    /// Gauss-Newton normal matrix `JᵀJ`, gradient `Jᵀr` (with `r = model − observed`)
    /// and cost, accumulated point by point.
    fn normal_equations(
        &self,
        c: &IntrinsicParams,
        poses: &[BoardPose],
    ) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
        let nf = self.free.len();
        let dim = self.dim();
        let mut n = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        let mut cost = 0.0;
        let mut cols = vec![0usize; nf + POSE_DOF];
        let mut local = [0.0f64; 2 * (NUM_INTRINSICS + POSE_DOF)];

        for (fi, (obs, pose)) in self.frames.iter().zip(poses).enumerate() {
            let base = nf + POSE_DOF * fi;
            for (k, col) in cols.iter_mut().enumerate().take(nf) {
                *col = k;
            }
            for k in 0..POSE_DOF {
                cols[nf + k] = base + k;
            }
            for (p, px) in obs {
                let j = projection_jacobian(p, pose, c)?;
                let proj = project_camera_point(&pose.transform(p), c)?;
                let res = proj - px;
                cost += res.norm_squared();
                // gather the free columns into a compact 2×m block
                let m = nf + POSE_DOF;
                for row in 0..2 {
                    for (k, &i) in self.free.iter().enumerate() {
                        local[row * m + k] = j[(row, i)];
                    }
                    for k in 0..POSE_DOF {
                        local[row * m + nf + k] = j[(row, NUM_INTRINSICS + k)];
                    }
                }
                for a in 0..m {
                    let (ja0, ja1) = (local[a], local[m + a]);
                    g[cols[a]] += ja0 * res.x + ja1 * res.y;
                    for b in a..m {
                        let v = ja0 * local[b] + ja1 * local[m + b];
                        n[(cols[a], cols[b])] += v;
                    }
                }
            }
        }
        n.fill_lower_triangle_with_upper_triangle();
        Ok((n, g, cost))
    }

    fn apply_step(
        &self,
        c: &IntrinsicParams,
        poses: &[BoardPose],
        delta: &DVector<f64>,
    ) -> (IntrinsicParams, Vec<BoardPose>) {
        let mut arr = c.to_array();
        for (k, &i) in self.free.iter().enumerate() {
            arr[i] += delta[k];
        }
        let nf = self.free.len();
        let poses = poses
            .iter()
            .enumerate()
            .map(|(fi, p)| {
                let o = nf + POSE_DOF * fi;
                let mut a = p.to_array();
                for k in 0..POSE_DOF {
                    a[k] += delta[o + k];
                }
                BoardPose::from_array(a)
            })
            .collect();
        (IntrinsicParams::from_array(arr), poses)
    }
}

/// Minimize the reprojection error without computing the covariance.
pub fn optimize(
    frames: &[FrameObservation],
    board: &BoardGeometry,
    initial: &IntrinsicParams,
    initial_poses: &[BoardPose],
    fixed: &ParamMask,
    options: &LmOptions,
) -> Result<Optimized> {
    if frames.len() != initial_poses.len() {
        return Err(Error::InvalidConfig(format!(
            "{} frames but {} initial poses",
            frames.len(),
            initial_poses.len()
        )));
    }
    initial.validate()?;
    let problem = Problem::new(frames, board, fixed)?;
    let num_points = problem.num_points();
    if 2 * num_points < problem.dim() {
        return Err(Error::Insufficient(format!(
            "{} constraints for {} unknowns",
            2 * num_points,
            problem.dim()
        )));
    }

    let mut c = *initial;
    let mut poses = initial_poses.to_vec();
    let mut cost = problem
        .cost(&c, &poses)
        .ok_or(Error::BehindCamera { depth: 0.0 })?;
    let mut lambda = options.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < options.max_iterations {
        let (n, g, _) = problem.normal_equations(&c, &poses)?;
        let diag_max = n.diagonal().max();
        loop {
            iterations += 1;
            let mut a = n.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * n[(i, i)].max(1e-12 * diag_max);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= options.lambda_factor;
                if iterations >= options.max_iterations {
                    break 'outer;
                }
                continue;
            };
            let delta = -chol.solve(&g);
            if delta.norm() < options.step_tolerance {
                converged = true;
                break 'outer;
            }
            let (c_new, poses_new) = problem.apply_step(&c, &poses, &delta);
            let cost_new = if c_new.fx > 0.0 && c_new.fy > 0.0 {
                problem.cost(&c_new, &poses_new)
            } else {
                None
            };
            match cost_new {
                Some(cn) if cn < cost => {
                    let rel = (cost - cn) / cost;
                    c = c_new;
                    poses = poses_new;
                    cost = cn;
                    lambda = (lambda / options.lambda_factor).max(1e-15);
                    if rel < options.cost_tolerance {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    lambda *= options.lambda_factor;
                    // no descent is possible at machine precision
                    if lambda > 1e16 || cost == 0.0 {
                        converged = true;
                        break 'outer;
                    }
                    if iterations >= options.max_iterations {
                        break 'outer;
                    }
                }
            }
        }
    }

    Ok(Optimized {
        intrinsics: c,
        poses,
        cost,
        num_points,
        converged,
        iterations,
    })
}

/// Refine intrinsics and poses and attach the covariance of the estimate.
///
/// Fixed parameters are left bit-identical and report zero variance.
pub fn refine(
    frames: &[FrameObservation],
    board: &BoardGeometry,
    image_size: ImageSize,
    initial: &IntrinsicParams,
    initial_poses: &[BoardPose],
    fixed: &ParamMask,
    options: &LmOptions,
) -> Result<CalibrationResult> {
    let opt = optimize(frames, board, initial, initial_poses, fixed, options)?;
    if !opt.converged {
        log::warn!(
            "refinement stopped after {} iterations without converging",
            opt.iterations
        );
    }
    let cov = covariance_masked(frames, board, &opt.intrinsics, &opt.poses, fixed)?;
    Ok(CalibrationResult {
        intrinsics: opt.intrinsics,
        image_size,
        poses: opt.poses.clone(),
        residual_rms: opt.residual_rms(),
        variances: cov.variances,
        iod: index_of_dispersion(&opt.intrinsics, &cov.variances),
        rank_deficient: cov.rank_deficient,
        converged: opt.converged,
    })
}

/// Parameter variances of a calibration assuming unit pixel noise.
///
/// All nine intrinsics and every pose are treated as unknowns.
pub fn covariance(
    frames: &[FrameObservation],
    board: &BoardGeometry,
    result: &CalibrationResult,
) -> Result<CovarianceEstimate> {
    covariance_masked(frames, board, &result.intrinsics, &result.poses, &ALL_FREE)
}

/// Like [`covariance`], with the masked intrinsics treated as known constants.
pub fn covariance_masked(
    frames: &[FrameObservation],
    board: &BoardGeometry,
    c: &IntrinsicParams,
    poses: &[BoardPose],
    fixed: &ParamMask,
) -> Result<CovarianceEstimate> {
    let problem = Problem::new(frames, board, fixed)?;
    let (n, _, _) = problem.normal_equations(c, poses)?;
    let (diag, rank_deficient) = pseudo_inverse_diagonal(&n, problem.free.len());
    let mut variances = [0.0; NUM_INTRINSICS];
    for (k, &i) in problem.free.iter().enumerate() {
        variances[i] = diag[k];
    }
    Ok(CovarianceEstimate {
        variances,
        rank_deficient,
    })
}

/// First `count` diagonal entries of the pseudo-inverse of a symmetric
/// positive semi-definite matrix.
///
/// The matrix is equilibrated to unit diagonal before the eigenvalue
/// truncation so that the rank decision does not depend on parameter units.
/// Returns whether any eigenvalue was truncated.
pub fn pseudo_inverse_diagonal(n: &DMatrix<f64>, count: usize) -> (Vec<f64>, bool) {
    let dim = n.nrows();
    let scale: Vec<f64> = (0..dim)
        .map(|i| {
            let d = n[(i, i)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut ns = n.clone();
    for i in 0..dim {
        for j in 0..dim {
            ns[(i, j)] *= scale[i] * scale[j];
        }
    }
    let eig = SymmetricEigen::new(ns);
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cutoff = PINV_RELATIVE_TOLERANCE * max;
    let mut truncated = max <= 0.0;
    let mut diag = vec![0.0; count];
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev <= cutoff {
            truncated = true;
            continue;
        }
        let v = eig.eigenvectors.column(k);
        for (i, d) in diag.iter_mut().enumerate() {
            *d += v[i] * v[i] / ev;
        }
    }
    for (i, d) in diag.iter_mut().enumerate() {
        *d *= scale[i] * scale[i];
    }
    (diag, truncated)
}

/// Index of dispersion `σ²ᵢ / |Cᵢ|`, falling back to `σ²ᵢ` where `Cᵢ = 0`.
pub fn index_of_dispersion(
    c: &IntrinsicParams,
    variances: &[f64; NUM_INTRINSICS],
) -> [f64; NUM_INTRINSICS] {
    let vals = c.to_array();
    let mut out = [0.0; NUM_INTRINSICS];
    for i in 0..NUM_INTRINSICS {
        out[i] = if vals[i] == 0.0 {
            variances[i]
        } else {
            variances[i] / vals[i].abs()
        };
    }
    out
}

/// Sum of squared reprojection residuals and point count.
pub fn reprojection_cost(
    frames: &[FrameObservation],
    board: &BoardGeometry,
    c: &IntrinsicParams,
    poses: &[BoardPose],
) -> Result<(f64, usize)> {
    let problem = Problem::new(frames, board, &ALL_FIXED)?;
    let cost = problem
        .cost(c, poses)
        .ok_or(Error::BehindCamera { depth: 0.0 })?;
    Ok((cost, problem.num_points()))
}
