//! Analytic target poses per parameter group and singular-configuration checks.

mod planner;
mod singularity;
mod subdivision;
mod targets;

pub use planner::TargetPlanner;
pub use singularity::{
    check_singularities, reflection_residuals, tilt_deg, violates_reflection, SingularityReport,
    SingularityTolerances,
};
pub use subdivision::subdivision_fraction;
pub use targets::{
    distortion_target, init_targets, pinhole_target, pinhole_tilt_deg, DistortionTarget,
    PoseConfig, TargetGroup, TargetPose, VisitedMask,
};
