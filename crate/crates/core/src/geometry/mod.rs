//! Camera model: pinhole projection with radial/tangential distortion,
//! analytic Jacobians and the distortion magnitude map.

mod distortion_map;
mod projection;
pub mod rotation;
mod types;

pub use distortion_map::*;
pub use projection::*;
pub use types::*;
