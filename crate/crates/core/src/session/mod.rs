//! Guided calibration session: frame gates, target selection and convergence.

mod jaccard;
mod state;

pub use jaccard::{convex_intersection, is_convex, jaccard_overlap, polygon_jaccard, signed_area};
pub use state::{
    convergence_step, is_still, min_points_required, FrameVerdict, KeyframeRecord, Phase, Session,
    SessionConfig, SessionSnapshot, VerdictReason,
};
