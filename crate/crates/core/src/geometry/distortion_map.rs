use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use super::projection::distort;
use super::types::{ImageSize, IntrinsicParams};
use crate::error::Result;

/// Default sampling stride of [`distortion_magnitude_map`] in pixels.
pub const DEFAULT_MAP_STRIDE: u32 = 4;

/// Pixel displacement caused by lens distortion, sampled on a regular grid.
///
/// Cell `(col, row)` covers pixels `[col·stride, (col+1)·stride)` horizontally
/// and likewise vertically. With a stride above one each cell stores the
/// maximum over the samples at its four corners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionMap {
    pub width: u32,
    pub height: u32,
    pub stride: u32,
    pub cols: usize,
    pub rows: usize,
    pub values: Vec<f64>,
}

/// Inclusive-exclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelRect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn intersects(&self, other: &PixelRect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

impl DistortionMap {
    pub fn value(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn cell_of_pixel(&self, x: f64, y: f64) -> (usize, usize) {
        let s = self.stride as f64;
        let col = ((x / s).floor().max(0.0) as usize).min(self.cols - 1);
        let row = ((y / s).floor().max(0.0) as usize).min(self.rows - 1);
        (col, row)
    }

    pub fn value_at_pixel(&self, x: f64, y: f64) -> f64 {
        let (c, r) = self.cell_of_pixel(x, y);
        self.value(c, r)
    }

    /// Pixel rectangle covered by the inclusive cell range.
    pub fn cells_rect(&self, col0: usize, row0: usize, col1: usize, row1: usize) -> PixelRect {
        let s = self.stride as f64;
        PixelRect {
            x0: col0 as f64 * s,
            y0: row0 as f64 * s,
            x1: ((col1 + 1) as f64 * s).min(self.width as f64),
            y1: ((row1 + 1) as f64 * s).min(self.height as f64),
        }
    }
}

/// Pixel-space displacement magnitude of the distortion model at one pixel.
///
/// The reference is the ideal pinhole projection of the viewing ray through
/// the pixel: `|K·Δ(x) − K·x|` with `x` the normalized coordinates of `px`.
pub fn displacement_at(px: &Point2<f64>, c: &IntrinsicParams) -> f64 {
    let n = Vector2::new((px.x - c.cx) / c.fx, (px.y - c.cy) / c.fy);
    let d = distort(&n, c) - n;
    (c.fx * d.x).hypot(c.fy * d.y)
}

/// Distortion magnitude map with the default stride.
pub fn distortion_magnitude_map(c: &IntrinsicParams, size: ImageSize) -> Result<DistortionMap> {
    distortion_magnitude_map_with_stride(c, size, DEFAULT_MAP_STRIDE)
}

pub fn distortion_magnitude_map_with_stride(
    c: &IntrinsicParams,
    size: ImageSize,
    stride: u32,
) -> Result<DistortionMap> {
    c.validate()?;
    let stride = stride.max(1);
    let cols = size.width.div_ceil(stride) as usize;
    let rows = size.height.div_ceil(stride) as usize;
    let mut values = vec![0.0; cols * rows];

    if stride == 1 {
        for r in 0..rows {
            for col in 0..cols {
                values[r * cols + col] = displacement_at(&Point2::new(col as f64, r as f64), c);
            }
        }
    } else {
        // samples on the cell corner lattice, then max over each cell's corners
        let s = stride as f64;
        let sx: Vec<f64> = (0..=cols).map(|i| (i as f64 * s).min(size.w())).collect();
        let sy: Vec<f64> = (0..=rows).map(|i| (i as f64 * s).min(size.h())).collect();
        let lattice: Vec<f64> = sy
            .iter()
            .flat_map(|&y| sx.iter().map(move |&x| (x, y)))
            .map(|(x, y)| displacement_at(&Point2::new(x, y), c))
            .collect();
        let lw = cols + 1;
        for r in 0..rows {
            for col in 0..cols {
                let m = lattice[r * lw + col]
                    .max(lattice[r * lw + col + 1])
                    .max(lattice[(r + 1) * lw + col])
                    .max(lattice[(r + 1) * lw + col + 1]);
                values[r * cols + col] = m;
            }
        }
    }

    Ok(DistortionMap {
        width: size.width,
        height: size.height,
        stride,
        cols,
        rows,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIZE: ImageSize = ImageSize::new(1280, 720);

    fn centered() -> IntrinsicParams {
        IntrinsicParams::pinhole(1000.0, 1000.0, 640.0, 360.0)
    }

    #[test]
    fn zero_distortion_gives_zero_map() {
        let m = distortion_magnitude_map(&centered(), SIZE).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert_eq!(m.cols, 320);
        assert_eq!(m.rows, 180);
    }

    #[test]
    fn positive_k1_is_radially_monotone() {
        let mut c = centered();
        c.k1 = 0.1;
        for stride in [1, 4] {
            let m = distortion_magnitude_map_with_stride(&c, SIZE, stride).unwrap();
            let (c0, row) = m.cell_of_pixel(640.0, 360.0);
            let along: Vec<f64> = (c0..m.cols).map(|col| m.value(col, row)).collect();
            assert!(along.windows(2).all(|w| w[1] > w[0]), "stride {stride}");
        }
    }

    #[test]
    fn pure_p1_map_is_anisotropic_but_mirror_symmetric_about_principal_row() {
        let mut c = centered();
        c.p1 = 1e-3;
        // oracle: evaluate the tangential term directly at mirrored points
        let mag = |x: f64, y: f64| {
            let r2 = x * x + y * y;
            let dx = 2.0 * c.p1 * x * y;
            let dy = c.p1 * (r2 + 2.0 * y * y);
            (c.fx * dx).hypot(c.fy * dy)
        };
        let m = distortion_magnitude_map_with_stride(&c, SIZE, 1).unwrap();
        for &(u, dv) in &[(100.0, 50.0), (900.0, 200.0), (1200.0, 300.0)] {
            let above = m.value_at_pixel(u, 360.0 - dv);
            let below = m.value_at_pixel(u, 360.0 + dv);
            let x = (u - 640.0) / 1000.0;
            let y = dv / 1000.0;
            assert!((above - mag(x, -y)).abs() < 1e-9);
            assert!((below - mag(x, y)).abs() < 1e-9);
            assert!((above - below).abs() < 1e-9);
        }
        // along the vertical axis the displacement is three times the horizontal one
        let h = m.value_at_pixel(640.0 + 300.0, 360.0);
        let v = m.value_at_pixel(640.0, 360.0 + 300.0);
        assert!((v / h - 3.0).abs() < 1e-9);
    }

    #[test]
    fn subsampled_map_upper_bounds_the_dense_one() {
        let c = IntrinsicParams::from_array([950.0, 960.0, 610.0, 380.0, -0.2, 0.05, 0.0, 2e-3, -1e-3]);
        let dense = distortion_magnitude_map_with_stride(&c, SIZE, 1).unwrap();
        let coarse = distortion_magnitude_map(&c, SIZE).unwrap();
        for y in (0..720).step_by(7) {
            for x in (0..1280).step_by(11) {
                let (xf, yf) = (x as f64, y as f64);
                assert!(coarse.value_at_pixel(xf, yf) >= dense.value_at_pixel(xf, yf) - 1e-9);
            }
        }
    }

    #[test]
    fn invalid_focal_is_rejected() {
        let mut c = centered();
        c.fx = -1.0;
        assert!(distortion_magnitude_map(&c, SIZE).is_err());
    }
}
