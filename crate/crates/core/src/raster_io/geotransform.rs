use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map from pixel corners to CRS coordinates.
///
/// ```text
/// x = origin_x + col * pixel_width + row * row_rotation
/// y = origin_y + col * col_rotation + row * pixel_height
/// ```
///
/// Only north-up (unrotated) transforms are accepted by the readers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_width: f64,
    pub pixel_height: f64,
    pub row_rotation: f64,
    pub col_rotation: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_width: f64, pixel_height: f64) -> Self {
        Self {
            origin_x,
            origin_y,
            pixel_width,
            pixel_height,
            row_rotation: 0.0,
            col_rotation: 0.0,
        }
    }

    /// Identity-like transform used for rasters without georeferencing tags.
    pub fn unit() -> Self {
        Self::new(0.0, 0.0, 1.0, -1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.row_rotation != 0.0 || self.col_rotation != 0.0 {
            return Err(Error::RotatedRaster);
        }
        if self.pixel_width == 0.0
            || self.pixel_height == 0.0
            || !self.pixel_width.is_finite()
            || !self.pixel_height.is_finite()
        {
            return Err(Error::invalid("pixel size must be finite and non-zero"));
        }
        Ok(())
    }

    /// Top-left corner of pixel (col, row).
    pub fn geo_of_pixel(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.pixel_width + row * self.row_rotation,
            self.origin_y + col * self.col_rotation + row * self.pixel_height,
        )
    }

    /// Fractional pixel coordinates of a CRS point (unrotated transforms only).
    pub fn fractional_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_width,
            (y - self.origin_y) / self.pixel_height,
        )
    }

    /// Pixel containing `(x, y)`, flooring fractional coordinates.
    pub fn pixel_of_geo(&self, x: f64, y: f64, width: usize, height: usize) -> Result<(usize, usize)> {
        let (fc, fr) = self.fractional_pixel(x, y);
        let col = fc.floor();
        let row = fr.floor();
        if !(col >= 0.0 && row >= 0.0 && col < width as f64 && row < height as f64) {
            return Err(Error::OutOfBounds(format!(
                "point ({x}, {y}) lies outside the {width}x{height} raster extent"
            )));
        }
        Ok((col as usize, row as usize))
    }

    /// Same origin, pixel sizes multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            pixel_width: self.pixel_width * factor,
            pixel_height: self.pixel_height * factor,
            ..*self
        }
    }

    pub fn to_gdal(&self) -> [f64; 6] {
        [
            self.origin_x,
            self.pixel_width,
            self.row_rotation,
            self.origin_y,
            self.col_rotation,
            self.pixel_height,
        ]
    }
}
