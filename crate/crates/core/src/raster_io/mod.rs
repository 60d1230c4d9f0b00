//! Georeferenced raster and point I/O.
//!
//! Rasters are GeoTIFF only. Every sample is surfaced as `f32`, with nodata
//! mapped to NaN, so downstream code deals with a single sentinel.

mod geotransform;
mod points;
mod stats;
pub(crate) mod tiff;

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use geotransform::GeoTransform;
pub use points::{parse_points, points_to_geojson, read_points, Point, PointCollection};
pub use stats::{compute_band_stats, BandStat, BandStats};

use crate::error::{Error, Result};

/// Internal tile edge of every GeoTIFF this crate writes.
pub const TILE_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleType {
    U8,
    U16,
    I16,
    F32,
}

impl SampleType {
    pub fn bytes(self) -> usize {
        match self {
            SampleType::U8 => 1,
            SampleType::U16 | SampleType::I16 => 2,
            SampleType::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compression {
    None,
    #[default]
    Deflate,
}

impl Compression {
    pub(crate) fn tiff_code(self) -> u16 {
        match self {
            Compression::None => 1,
            Compression::Deflate => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteOptions {
    pub compression: Compression,
}

/// Geometry and encoding of a raster about to be written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterSpec {
    pub width: usize,
    pub height: usize,
    pub band_count: usize,
    pub sample_type: SampleType,
    pub geotransform: GeoTransform,
    pub crs_id: String,
    pub nodata: Option<f64>,
}

/// An open GeoTIFF. Holds metadata only; pixels are read on demand and the
/// handle can be shared between threads.
#[derive(Debug, Clone)]
pub struct RasterDataset {
    path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub band_count: usize,
    pub sample_type: SampleType,
    pub geotransform: GeoTransform,
    pub crs_id: String,
    pub nodata: Option<f64>,
    layout: tiff::ChunkLayout,
}

/// A band-major window of `f32` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelBlock {
    pub col_off: usize,
    pub row_off: usize,
    pub width: usize,
    pub height: usize,
    pub band_count: usize,
    pub data: Vec<f32>,
}

impl PixelBlock {
    pub fn new(col_off: usize, row_off: usize, width: usize, height: usize, band_count: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != band_count * width * height {
            return Err(Error::ShapeMismatch(format!(
                "block data has {} values, expected {}",
                data.len(),
                band_count * width * height
            )));
        }
        Ok(Self {
            col_off,
            row_off,
            width,
            height,
            band_count,
            data,
        })
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, band: usize, col: usize, row: usize) -> f32 {
        self.data[band * self.width * self.height + row * self.width + col]
    }
}

pub fn open_raster(path: impl AsRef<Path>) -> Result<RasterDataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let header = tiff::read_header(path)?;
    header.geotransform.validate()?;
    Ok(RasterDataset {
        path: path.to_path_buf(),
        width: header.layout.width,
        height: header.layout.height,
        band_count: header.layout.samples,
        sample_type: header.layout.sample_type,
        geotransform: header.geotransform,
        crs_id: header.crs_id,
        nodata: header.nodata,
        layout: header.layout,
    })
}

impl RasterDataset {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn all_bands(&self) -> Vec<usize> {
        (0..self.band_count).collect()
    }

    pub fn spec(&self) -> RasterSpec {
        RasterSpec {
            width: self.width,
            height: self.height,
            band_count: self.band_count,
            sample_type: self.sample_type,
            geotransform: self.geotransform,
            crs_id: self.crs_id.clone(),
            nodata: self.nodata,
        }
    }

    /// Read a window of the given bands (in the given order) as `f32`.
    pub fn read_window(&self, col_off: usize, row_off: usize, width: usize, height: usize, bands: &[usize]) -> Result<PixelBlock> {
        if width == 0 || height == 0 || col_off + width > self.width || row_off + height > self.height {
            return Err(Error::OutOfBounds(format!(
                "window ({col_off}, {row_off}, {width}x{height}) outside {}x{} raster",
                self.width, self.height
            )));
        }
        if let Some(&b) = bands.iter().find(|&&b| b >= self.band_count) {
            return Err(Error::OutOfBounds(format!(
                "band index {b} invalid for {}-band raster",
                self.band_count
            )));
        }
        let mut file = File::open(&self.path)?;
        let mut data = self.layout.read_window(&mut file, col_off, row_off, width, height, bands)?;
        if let Some(nd) = self.nodata {
            if !nd.is_nan() {
                let nd = nd as f32;
                data.iter_mut().filter(|v| **v == nd).for_each(|v| *v = f32::NAN);
            }
        }
        PixelBlock::new(col_off, row_off, width, height, bands.len(), data)
    }

    pub fn read_all(&self) -> Result<Raster> {
        let block = self.read_window(0, 0, self.width, self.height, &self.all_bands())?;
        Ok(Raster {
            width: self.width,
            height: self.height,
            band_count: self.band_count,
            geotransform: self.geotransform,
            crs_id: self.crs_id.clone(),
            data: block.data,
        })
    }

    /// Visit the raster in full-width row strips of at most `rows` rows.
    pub fn for_each_strip<F>(&self, rows: usize, bands: &[usize], mut f: F) -> Result<()>
    where
        F: FnMut(&PixelBlock) -> Result<()>,
    {
        let rows = rows.max(1);
        let mut r0 = 0;
        while r0 < self.height {
            let h = rows.min(self.height - r0);
            let block = self.read_window(0, r0, self.width, h, bands)?;
            f(&block)?;
            r0 += h;
        }
        Ok(())
    }
}

/// A fully loaded float raster, band-major. Nodata is NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub band_count: usize,
    pub geotransform: GeoTransform,
    pub crs_id: String,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, band_count: usize, geotransform: GeoTransform, crs_id: impl Into<String>, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || band_count == 0 {
            return Err(Error::invalid("raster dimensions must be at least 1"));
        }
        if data.len() != width * height * band_count {
            return Err(Error::ShapeMismatch(format!(
                "raster data has {} values, expected {}",
                data.len(),
                width * height * band_count
            )));
        }
        Ok(Self {
            width,
            height,
            band_count,
            geotransform,
            crs_id: crs_id.into(),
            data,
        })
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.cells();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, band: usize, col: usize, row: usize) -> f32 {
        self.data[band * self.cells() + row * self.width + col]
    }

    /// Feature vector of one cell (band order).
    pub fn cell_vector(&self, cell: usize) -> Vec<f32> {
        let n = self.cells();
        (0..self.band_count).map(|b| self.data[b * n + cell]).collect()
    }

    /// A cell is valid when every band holds a finite value.
    pub fn is_valid_cell(&self, cell: usize) -> bool {
        let n = self.cells();
        (0..self.band_count).all(|b| self.data[b * n + cell].is_finite())
    }

    pub fn cell_of_geo(&self, x: f64, y: f64) -> Result<usize> {
        let (c, r) = self.geotransform.pixel_of_geo(x, y, self.width, self.height)?;
        Ok(r * self.width + c)
    }

    pub fn spec(&self, sample_type: SampleType, nodata: Option<f64>) -> RasterSpec {
        RasterSpec {
            width: self.width,
            height: self.height,
            band_count: self.band_count,
            sample_type,
            geotransform: self.geotransform,
            crs_id: self.crs_id.clone(),
            nodata,
        }
    }

    /// Write as float32; a NaN nodata tag is written when any sample is NaN.
    pub fn write(&self, path: impl AsRef<Path>, options: WriteOptions) -> Result<PathBuf> {
        let nodata = self.data.iter().any(|v| v.is_nan()).then_some(f64::NAN);
        self.write_as(path, SampleType::F32, nodata, options)
    }

    pub fn write_as(&self, path: impl AsRef<Path>, sample_type: SampleType, nodata: Option<f64>, options: WriteOptions) -> Result<PathBuf> {
        let spec = self.spec(sample_type, nodata);
        let n = self.cells();
        let w = self.width;
        write_raster(path, &spec, options, |r0, rows| {
            let mut out = Vec::with_capacity(self.band_count * rows * w);
            for b in 0..self.band_count {
                out.extend_from_slice(&self.data[b * n + r0 * w..b * n + (r0 + rows) * w]);
            }
            Ok(out)
        })
    }
}

/// Write a tiled GeoTIFF, pulling pixels from `source(row_off, rows)` one
/// tile row at a time. The source returns band-major values covering the
/// full raster width.
pub fn write_raster<F>(path: impl AsRef<Path>, spec: &RasterSpec, options: WriteOptions, source: F) -> Result<PathBuf>
where
    F: FnMut(usize, usize) -> Result<Vec<f32>>,
{
    let path = path.as_ref();
    if spec.width == 0 || spec.height == 0 || spec.band_count == 0 {
        return Err(Error::invalid("raster dimensions must be at least 1"));
    }
    if spec.band_count > u16::MAX as usize {
        return Err(Error::invalid(format!("{} bands exceeds the TIFF limit", spec.band_count)));
    }
    spec.geotransform.validate()?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() && !parent.exists() {
            return Err(Error::NotFound(parent.to_path_buf()));
        }
    }
    tiff::write_tiled(path, spec, options.compression, TILE_SIZE, source)?;
    Ok(path.to_path_buf())
}

/// Transform a raster strip by strip into a new file.
///
/// `f` receives each input strip (all requested bands) and must return
/// `out_bands * rows * width` band-major values.
pub fn map_raster<F>(input: &RasterDataset, bands: &[usize], out_path: impl AsRef<Path>, out_spec: &RasterSpec, options: WriteOptions, mut f: F) -> Result<PathBuf>
where
    F: FnMut(&PixelBlock) -> Result<Vec<f32>>,
{
    if out_spec.width != input.width || out_spec.height != input.height {
        return Err(Error::ShapeMismatch("output raster must match input dimensions".into()));
    }
    write_raster(out_path, out_spec, options, |r0, rows| {
        let block = input.read_window(0, r0, input.width, rows, bands)?;
        f(&block)
    })
}
