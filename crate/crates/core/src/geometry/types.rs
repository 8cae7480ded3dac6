use nalgebra::{Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation;
use crate::error::{Error, Result};

/// Number of intrinsic parameters in the camera model.
pub const NUM_INTRINSICS: usize = 9;

/// One of the nine intrinsic parameters, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Fx,
    Fy,
    Cx,
    Cy,
    K1,
    K2,
    K3,
    P1,
    P2,
}

/// Pinhole parameters are constrained by tilted views, distortion parameters by
/// sampling strongly distorted image regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Pinhole,
    Distortion,
}

impl Param {
    pub const ALL: [Param; NUM_INTRINSICS] = [
        Param::Fx,
        Param::Fy,
        Param::Cx,
        Param::Cy,
        Param::K1,
        Param::K2,
        Param::K3,
        Param::P1,
        Param::P2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Param> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::Fx => "fx",
            Param::Fy => "fy",
            Param::Cx => "cx",
            Param::Cy => "cy",
            Param::K1 => "k1",
            Param::K2 => "k2",
            Param::K3 => "k3",
            Param::P1 => "p1",
            Param::P2 => "p2",
        }
    }

    pub fn group(self) -> ParamGroup {
        if self.index() < 4 {
            ParamGroup::Pinhole
        } else {
            ParamGroup::Distortion
        }
    }
}

impl std::fmt::Display for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter `{s}`")))
    }
}

/// Camera intrinsics `[fx, fy, cx, cy, k1, k2, k3, p1, p2]`.
///
/// Skew is fixed to zero. Serializes as a flat array in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 9]", into = "[f64; 9]")]
pub struct IntrinsicParams {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
}

impl IntrinsicParams {
    /// Pinhole intrinsics with all distortion coefficients zero.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self::from_array([fx, fy, cx, cy, 0.0, 0.0, 0.0, 0.0, 0.0])
    }

    pub fn from_array(a: [f64; NUM_INTRINSICS]) -> Self {
        Self {
            fx: a[0],
            fy: a[1],
            cx: a[2],
            cy: a[3],
            k1: a[4],
            k2: a[5],
            k3: a[6],
            p1: a[7],
            p2: a[8],
        }
    }

    pub fn to_array(&self) -> [f64; NUM_INTRINSICS] {
        [
            self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.p1, self.p2,
        ]
    }

    pub fn get(&self, p: Param) -> f64 {
        self.to_array()[p.index()]
    }

    pub fn set(&mut self, p: Param, value: f64) {
        let mut a = self.to_array();
        a[p.index()] = value;
        *self = Self::from_array(a);
    }

    /// Copy with all distortion coefficients set to zero.
    pub fn without_distortion(&self) -> Self {
        Self::pinhole(self.fx, self.fy, self.cx, self.cy)
    }

    pub fn has_distortion(&self) -> bool {
        self.to_array()[4..].iter().any(|&c| c != 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidIntrinsics("non-finite entry".into()));
        }
        Ok(())
    }

    pub fn camera_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

impl From<[f64; NUM_INTRINSICS]> for IntrinsicParams {
    fn from(a: [f64; NUM_INTRINSICS]) -> Self {
        Self::from_array(a)
    }
}

impl From<IntrinsicParams> for [f64; NUM_INTRINSICS] {
    fn from(c: IntrinsicParams) -> Self {
        c.to_array()
    }
}

/// Image dimensions in pixels, serialized as `[width, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn w(&self) -> f64 {
        self.width as f64
    }

    pub fn h(&self) -> f64 {
        self.height as f64
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new(self.w() / 2.0, self.h() / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w() * self.h()
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.w() && p.y <= self.h()
    }
}

impl From<[u32; 2]> for ImageSize {
    fn from(a: [u32; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl From<ImageSize> for [u32; 2] {
    fn from(s: ImageSize) -> Self {
        [s.width, s.height]
    }
}

/// Intrinsics together with the image size they apply to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: IntrinsicParams,
    pub image_size: ImageSize,
}

/// Rigid transform from board to camera coordinates.
///
/// The rotation is stored as an axis-angle vector so that a pose contributes
/// exactly six unknowns to the optimization. Serializes as
/// `[rx, ry, rz, tx, ty, tz]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct BoardPose {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl BoardPose {
    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_matrix(r: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(rotation::log(r), translation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation::exp(&self.rotation)
    }

    pub fn transform(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation_matrix() * p.coords + self.translation)
    }

    /// Board plane normal in camera coordinates.
    pub fn normal(&self) -> Vector3<f64> {
        self.rotation_matrix().column(2).into_owned()
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(Vector3::new(a[0], a[1], a[2]), Vector3::new(a[3], a[4], a[5]))
    }
}

impl From<[f64; 6]> for BoardPose {
    fn from(a: [f64; 6]) -> Self {
        Self::from_array(a)
    }
}

impl From<BoardPose> for [f64; 6] {
    fn from(p: BoardPose) -> Self {
        p.to_array()
    }
}

/// Planar chessboard target.
///
/// Board coordinates put the origin at the board center with X to the right,
/// Y downwards and Z = 0 on the board, so the identity rotation shows the
/// board upright and facing the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardGeometry {
    pub squares_x: usize,
    pub squares_y: usize,
    pub square_length: f64,
}

impl Default for BoardGeometry {
    /// 9×6 squares, one unit wide.
    fn default() -> Self {
        Self {
            squares_x: 9,
            squares_y: 6,
            square_length: 1.0 / 9.0,
        }
    }
}

impl BoardGeometry {
    pub fn corners_x(&self) -> usize {
        self.squares_x - 1
    }

    pub fn corners_y(&self) -> usize {
        self.squares_y - 1
    }

    pub fn num_corners(&self) -> usize {
        self.corners_x() * self.corners_y()
    }

    pub fn width(&self) -> f64 {
        self.squares_x as f64 * self.square_length
    }

    pub fn height(&self) -> f64 {
        self.squares_y as f64 * self.square_length
    }

    /// Interior corner `id`, row-major starting at the top-left.
    pub fn object_point(&self, id: usize) -> Option<Point3<f64>> {
        if id >= self.num_corners() {
            return None;
        }
        let (col, row) = (id % self.corners_x(), id / self.corners_x());
        let x0 = -(self.corners_x() as f64 - 1.0) / 2.0;
        let y0 = -(self.corners_y() as f64 - 1.0) / 2.0;
        Some(Point3::new(
            (x0 + col as f64) * self.square_length,
            (y0 + row as f64) * self.square_length,
            0.0,
        ))
    }

    pub fn object_points(&self) -> Vec<Point3<f64>> {
        (0..self.num_corners())
            .map(|id| self.object_point(id).unwrap())
            .collect()
    }

    /// Outer board corners: top-left, top-right, bottom-right, bottom-left.
    pub fn outline(&self) -> [Point3<f64>; 4] {
        let (hw, hh) = (self.width() / 2.0, self.height() / 2.0);
        [
            Point3::new(-hw, -hh, 0.0),
            Point3::new(hw, -hh, 0.0),
            Point3::new(hw, hh, 0.0),
            Point3::new(-hw, hh, 0.0),
        ]
    }
}
