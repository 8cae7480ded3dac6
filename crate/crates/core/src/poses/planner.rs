use serde::{Deserialize, Serialize};

use super::singularity::check_singularities;
use super::targets::{distortion_target, pinhole_target, PoseConfig, TargetPose, VisitedMask};
use crate::error::{Error, Result};
use crate::geometry::{
    distortion_magnitude_map_with_stride, BoardGeometry, BoardPose, ImageSize, IntrinsicParams, Param,
    ParamGroup, DEFAULT_MAP_STRIDE,
};

/// Subdivision steps skipped at most when a pinhole target mirrors a prior pose.
const MAX_STEP_SKIPS: usize = 16;

/// Stateful target generation: per-parameter subdivision steps and the
/// visited part of the distortion map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPlanner {
    pub config: PoseConfig,
    pub map_stride: u32,
    /// Next subdivision step of fx, fy, cx, cy.
    steps: [usize; 4],
    visited: Option<VisitedMask>,
}

impl TargetPlanner {
    pub fn new(config: PoseConfig, map_stride: u32) -> Self {
        Self {
            config,
            map_stride,
            steps: [0; 4],
            visited: None,
        }
    }

    pub fn step(&self, param: Param) -> Option<usize> {
        self.steps.get(param.index()).copied()
    }

    pub fn visited(&self) -> Option<&VisitedMask> {
        self.visited.as_ref()
    }

    /// Next target for a pinhole parameter. Steps whose pose violates a
    /// singularity rule against `prior` are skipped.
    pub fn pinhole(
        &mut self,
        param: Param,
        board: &BoardGeometry,
        c_est: &IntrinsicParams,
        image_size: ImageSize,
        prior: &[BoardPose],
    ) -> Result<TargetPose> {
        if param.group() != ParamGroup::Pinhole {
            return Err(Error::InvalidConfig(format!("{param} is not a pinhole parameter")));
        }
        let slot = param.index();
        let mut first = None;
        for _ in 0..MAX_STEP_SKIPS {
            let step = self.steps[slot];
            self.steps[slot] += 1;
            let t = pinhole_target(param, step, board, c_est, image_size, &self.config)?;
            if check_singularities(&t.pose, prior, &self.config.tolerances).passes() {
                return Ok(t);
            }
            first.get_or_insert(t);
        }
        log::warn!("no pinhole target for {param} satisfies the reflection constraint");
        Ok(first.expect("at least one candidate"))
    }

    /// Next distortion target on the map of `c_est`. When every region has
    /// been visited the mask is cleared and the search restarts; if still no
    /// region admits a target the mask is left untouched.
    pub fn distortion(
        &mut self,
        board: &BoardGeometry,
        c_est: &IntrinsicParams,
        image_size: ImageSize,
    ) -> Result<TargetPose> {
        let map = distortion_magnitude_map_with_stride(c_est, image_size, self.map_stride)?;
        let visited = match &self.visited {
            Some(v) if v.cols == map.cols && v.rows == map.rows => v.clone(),
            _ => VisitedMask::for_map(&map),
        };
        let found = match distortion_target(&map, &visited, board, c_est, image_size, &self.config) {
            Err(Error::MapExhausted) => {
                match distortion_target(&map, &VisitedMask::for_map(&map), board, c_est, image_size, &self.config) {
                    Err(Error::MapExhausted) => {
                        return Err(Error::NoPlacement("no distortion region admits a target".into()))
                    }
                    other => other?,
                }
            }
            other => other?,
        };
        self.visited = Some(found.visited);
        Ok(found.target)
    }
}

impl Default for TargetPlanner {
    fn default() -> Self {
        Self::new(PoseConfig::default(), DEFAULT_MAP_STRIDE)
    }
}
