//! Sliding-window tile plans.
//!
//! Tiles are square. Offsets per axis are `0, stride, 2*stride, ...` up to
//! `dim - size`, plus one flush window ending exactly at the raster edge when
//! the regular grid stops short of it. Overlap is expressed only through
//! `stride < size`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster_io::{BandStats, PixelBlock};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub sample_size: usize,
    pub stride: usize,
    pub raster_width: usize,
    pub raster_height: usize,
    /// `(col_off, row_off)`, row-major.
    pub offsets: Vec<(usize, usize)>,
}

/// Offsets along one axis.
pub fn axis_offsets(dim: usize, size: usize, stride: usize) -> Vec<usize> {
    let last = dim - size;
    let mut offs: Vec<usize> = (0..=last).step_by(stride).collect();
    if offs.last() != Some(&last) {
        offs.push(last);
    }
    offs
}

pub fn plan_tiles(raster_width: usize, raster_height: usize, sample_size: usize, stride: usize) -> Result<TilePlan> {
    if sample_size == 0 || sample_size > raster_width.min(raster_height) {
        return Err(Error::invalid(format!(
            "sample size {sample_size} does not fit a {raster_width}x{raster_height} raster"
        )));
    }
    if stride == 0 || stride > sample_size {
        return Err(Error::invalid(format!(
            "stride {stride} must be in 1..={sample_size}"
        )));
    }
    let cols = axis_offsets(raster_width, sample_size, stride);
    let rows = axis_offsets(raster_height, sample_size, stride);
    let offsets = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (c, r)))
        .collect();
    Ok(TilePlan {
        sample_size,
        stride,
        raster_width,
        raster_height,
        offsets,
    })
}

impl TilePlan {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn batch_count(&self, batch_size: usize) -> usize {
        self.offsets.len().div_ceil(batch_size.max(1))
    }

    /// Tile indices belonging to batch `id`.
    pub fn batch_range(&self, batch_size: usize, id: usize) -> std::ops::Range<usize> {
        let start = id * batch_size;
        start.min(self.len())..(start + batch_size).min(self.len())
    }
}

/// `(v - mean) / std` per band. Zero-variance bands become 0, NaN stays NaN.
pub fn normalize_block(block: &PixelBlock, stats: &BandStats) -> Result<PixelBlock> {
    if stats.len() != block.band_count {
        return Err(Error::ShapeMismatch(format!(
            "stats describe {} bands, block has {}",
            stats.len(),
            block.band_count
        )));
    }
    let mut out = block.clone();
    for (b, st) in stats.bands.iter().enumerate() {
        let (mean, std) = (st.mean, st.std);
        for v in out.band_mut(b) {
            if v.is_nan() {
                continue;
            }
            *v = if std == 0.0 {
                0.0
            } else {
                ((*v as f64 - mean) / std) as f32
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster_io::BandStat;

    #[test]
    fn hundred_by_hundred_stride_32() {
        let plan = plan_tiles(100, 100, 64, 32).unwrap();
        assert_eq!(axis_offsets(100, 64, 32), vec![0, 32, 36]);
        assert_eq!(plan.len(), 9);
        assert_eq!(plan.offsets[0], (0, 0));
        assert_eq!(plan.offsets[2], (36, 0));
        assert_eq!(plan.offsets[8], (36, 36));
    }

    #[test]
    fn exact_fit_single_tile() {
        for stride in 1..=64 {
            let plan = plan_tiles(64, 64, 64, stride).unwrap();
            assert_eq!(plan.offsets, vec![(0, 0)]);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(plan_tiles(100, 100, 128, 32).is_err());
        assert!(plan_tiles(100, 100, 64, 0).is_err());
        assert!(plan_tiles(100, 100, 64, 65).is_err());
    }

    #[test]
    fn batches_split_plan() {
        let plan = plan_tiles(100, 100, 64, 32).unwrap();
        assert_eq!(plan.batch_count(4), 3);
        assert_eq!(plan.batch_range(4, 0), 0..4);
        assert_eq!(plan.batch_range(4, 2), 8..9);
    }

    fn block(values: Vec<f32>, bands: usize) -> PixelBlock {
        let n = values.len() / bands;
        PixelBlock::new(0, 0, n, 1, bands, values).unwrap()
    }

    fn stats(pairs: &[(f64, f64)]) -> BandStats {
        BandStats {
            bands: pairs
                .iter()
                .map(|&(mean, std)| BandStat { mean, std, min: 0.0, max: 0.0 })
                .collect(),
        }
    }

    #[test]
    fn normalize_centers_and_scales() {
        let b = block(vec![3.0, 3.0, 0.0, 10.0], 2);
        let out = normalize_block(&b, &stats(&[(3.0, 2.0), (5.0, 5.0)])).unwrap();
        assert_eq!(out.data, vec![0.0, 0.0, -1.0, 1.0]);
    }

    #[test]
    fn zero_std_and_nan() {
        let b = block(vec![4.0, f32::NAN], 1);
        let out = normalize_block(&b, &stats(&[(4.0, 0.0)])).unwrap();
        assert_eq!(out.data[0], 0.0);
        assert!(out.data[1].is_nan());
    }

    #[test]
    fn identity_stats_and_mismatch() {
        let b = block(vec![1.5, -2.0, 7.0], 1);
        assert_eq!(normalize_block(&b, &BandStats::identity(1)).unwrap(), b);
        assert!(normalize_block(&b, &BandStats::identity(2)).is_err());
    }
}
