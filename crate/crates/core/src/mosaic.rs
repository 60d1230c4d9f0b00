//! Merging per-tile patch grids into one feature raster at patch resolution.
//!
//! The output grid is anchored to the input origin: cell `(i, j)` covers
//! input pixels `[i*p, (i+1)*p) x [j*p, (j+1)*p)`. A patch lands in the cell
//! containing its center, so flush tiles whose offsets are not multiples of
//! `p` still map onto the same grid. Overlaps are averaged.

use crate::encoder::{InferenceOutcome, PatchFeatureGrid};
use crate::error::{Error, Result};
use crate::raster_io::{GeoTransform, Raster};

pub fn output_grid_geometry(gt: &GeoTransform, width: usize, height: usize, patch: usize) -> Result<(usize, usize, GeoTransform)> {
    if patch == 0 {
        return Err(Error::invalid("patch size must be at least 1"));
    }
    Ok((width.div_ceil(patch), height.div_ceil(patch), gt.scaled(patch as f64)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureAccumulator {
    pub out_width: usize,
    pub out_height: usize,
    pub dim: usize,
    pub patch: usize,
    pub geotransform: GeoTransform,
    pub crs_id: String,
    /// Cell-major: `sum[cell * dim + f]`.
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl FeatureAccumulator {
    pub fn new(in_gt: &GeoTransform, in_width: usize, in_height: usize, crs_id: &str, patch: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        let (out_width, out_height, geotransform) = output_grid_geometry(in_gt, in_width, in_height, patch)?;
        let cells = out_width * out_height;
        Ok(Self {
            out_width,
            out_height,
            dim,
            patch,
            geotransform,
            crs_id: crs_id.to_string(),
            sum: vec![0.0; cells * dim],
            count: vec![0; cells],
        })
    }

    /// Output cell of patch `local` in a tile starting at pixel `off`.
    pub fn cell_of_patch(&self, off: usize, local: usize) -> usize {
        (off + local * self.patch + self.patch / 2) / self.patch
    }

    pub fn accumulate(&mut self, grid: &PatchFeatureGrid) -> Result<()> {
        if grid.dim != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "grid has {} features, accumulator {}",
                grid.dim, self.dim
            )));
        }
        for gy in 0..grid.grid {
            let cy = self.cell_of_patch(grid.row_off, gy);
            for gx in 0..grid.grid {
                let cx = self.cell_of_patch(grid.col_off, gx);
                assert!(
                    cx < self.out_width && cy < self.out_height,
                    "patch ({gx},{gy}) of tile at ({},{}) falls outside the output grid",
                    grid.col_off,
                    grid.row_off
                );
                let cell = cy * self.out_width + cx;
                self.count[cell] += 1;
                let acc = &mut self.sum[cell * self.dim..(cell + 1) * self.dim];
                for (a, &v) in acc.iter_mut().zip(grid.token(gx, gy)) {
                    *a += v as f64;
                }
            }
        }
        Ok(())
    }

    /// Fold another accumulator over the same grid into this one.
    pub fn merge(&mut self, other: &FeatureAccumulator) -> Result<()> {
        if (self.out_width, self.out_height, self.dim, self.patch) != (other.out_width, other.out_height, other.dim, other.patch) {
            return Err(Error::ShapeMismatch("accumulators cover different grids".into()));
        }
        self.sum.iter_mut().zip(&other.sum).for_each(|(a, b)| *a += b);
        self.count.iter_mut().zip(&other.count).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn counts(&self) -> &[u32] {
        &self.count
    }

    /// Per-cell mean as a float32 raster; cells never hit become NaN.
    pub fn finalize(&self) -> Result<Raster> {
        if self.count.iter().all(|&c| c == 0) {
            return Err(Error::NoData("nothing was accumulated".into()));
        }
        let cells = self.out_width * self.out_height;
        let mut data = vec![f32::NAN; cells * self.dim];
        for cell in 0..cells {
            let n = self.count[cell];
            if n == 0 {
                continue;
            }
            for f in 0..self.dim {
                data[f * cells + cell] = (self.sum[cell * self.dim + f] / n as f64) as f32;
            }
        }
        Raster::new(self.out_width, self.out_height, self.dim, self.geotransform, self.crs_id.clone(), data)
    }
}

/// Accumulate every batch of a finished inference run, in batch order.
pub fn mosaic_inference(outcome: &InferenceOutcome, acc: &mut FeatureAccumulator) -> Result<()> {
    for id in 0..outcome.n_batches() {
        for grid in outcome.read_batch(id)? {
            acc.accumulate(&grid)?;
        }
    }
    Ok(())
}
