//! Planar-target calibration: homography estimation, closed-form
//! initialization, Levenberg–Marquardt refinement of the reprojection error,
//! covariance of the estimate and the index of dispersion.

mod homography;
mod observation;
mod pipeline;
mod refine;
mod zhang;

pub use homography::{estimate_homography, transform_point};
pub use observation::{CornerObservation, FrameObservation};
pub use pipeline::{
    bootstrap_single_frame, calibrate, calibrate_from, calibrate_or_refine, fit_pose, BootstrapEstimate, PoseFit,
};
pub use refine::{
    covariance, covariance_masked, index_of_dispersion, optimize, pseudo_inverse_diagonal,
    refine, reprojection_cost, CalibrationResult, CovarianceEstimate, LmOptions, Optimized,
    ParamMask, ALL_FIXED, ALL_FREE, PINV_RELATIVE_TOLERANCE,
};
pub use zhang::{frame_homography, init_intrinsics, initial_pose, pose_from_homography};
