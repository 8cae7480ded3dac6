//! Synthetic ground truth: simulated cameras, rendered observations, held-out
//! estimation error and the experiments built on them.

mod camera;
mod compact;
mod correlation;
mod guided;
mod render;
mod testset;

pub use camera::{sample_camera, GroundTruthCamera};
pub use compact::{greedy_compact, Compaction};
pub use correlation::{
    run_correlation_experiment, CorrelationConfig, CorrelationRecord, CorrelationTable, Layout,
};
pub use guided::{bootstrap_pose, pose_matching_overlay, run_guided_session, GuidedConfig, GuidedRun};
pub use render::{derive_seed, render_observation, render_with_rng};
pub use testset::{
    estimation_error, generate_test_set, EstimationError, TestFrame, TestSet, DEFAULT_TEST_FRAMES,
};
