//! Interactive planar-target camera calibration.
//!
//! The crate generates calibration board poses analytically, tracks
//! per-parameter uncertainty through the covariance of the estimate and
//! drives a guided capture session until every intrinsic parameter has
//! converged.
//!
//! - [`geometry`]: camera model, Jacobians, distortion map
//! - [`calibrate`]: homographies, closed-form initialization, Levenberg–Marquardt
//!   refinement, covariance and index of dispersion
//! - [`poses`]: target pose generation and singular-configuration checks
//! - [`session`]: the guidance state machine
//! - [`synth`]: synthetic cameras, observations and experiments

pub mod calibrate;
mod error;
pub mod geometry;
pub mod poses;
pub mod session;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{
    BoardGeometry, BoardPose, CameraModel, ImageSize, IntrinsicParams, Param, ParamGroup,
};
