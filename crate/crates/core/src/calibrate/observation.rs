use std::collections::{HashMap, HashSet};

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoardGeometry;

/// A detected board corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerObservation {
    pub id: usize,
    pub pixel: Point2<f64>,
}

/// Identified corner detections of one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub points: Vec<CornerObservation>,
}

impl FrameObservation {
    pub fn new(points: Vec<CornerObservation>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Ids must be distinct and refer to corners of `board`.
    pub fn validate(&self, board: &BoardGeometry) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.points.len());
        for p in &self.points {
            if p.id >= board.num_corners() {
                return Err(Error::InvalidConfig(format!("corner id {} out of range", p.id)));
            }
            if !seen.insert(p.id) {
                return Err(Error::InvalidConfig(format!("duplicate corner id {}", p.id)));
            }
            if !p.pixel.x.is_finite() || !p.pixel.y.is_finite() {
                return Err(Error::InvalidConfig(format!("non-finite pixel for corner {}", p.id)));
            }
        }
        Ok(())
    }

    /// `(object point, pixel)` pairs.
    pub fn correspondences(&self, board: &BoardGeometry) -> Vec<(Point3<f64>, Point2<f64>)> {
        self.points
            .iter()
            .filter_map(|p| board.object_point(p.id).map(|o| (o, p.pixel)))
            .collect()
    }

    pub fn by_id(&self) -> HashMap<usize, Point2<f64>> {
        self.points.iter().map(|p| (p.id, p.pixel)).collect()
    }
}
