//! Dimensionality reduction and clustering over feature rasters.
//!
//! Models are fitted on a pixel sample and then applied to the full raster
//! strip by strip.

mod kmeans;
mod pca;
mod tsne;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use kmeans::{fit_kmeans, CLASS_NODATA, predict_kmeans, predict_kmeans_raster, KMeansModel, KMeansParams};
pub use pca::{fit_pca, transform_raster_pca, PcaModel};
pub use tsne::{tsne_embed, TsneParams, TsneResult};

use crate::error::{Error, Result};
use crate::raster_io::{Raster, RasterDataset};

/// Row-major `n x d` sample of valid cells, in ascending cell order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelSample {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
    pub cells: Vec<usize>,
    pub seed: u64,
}

impl PixelSample {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch("sample rows differ in length".into()));
        }
        Ok(Self {
            n: rows.len(),
            d,
            data: rows.concat(),
            cells: (0..rows.len()).collect(),
            seed: 0,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!("sample row {} holds {}", i / self.d.max(1), self.data[i]))),
            None => Ok(()),
        }
    }
}

/// Sorted ordinals of `min(n, total)` items drawn without replacement.
fn pick(total: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= total {
        return (0..total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, total, n).into_vec();
    idx.sort_unstable();
    idx
}

fn valid_cells(r: &Raster) -> Vec<usize> {
    (0..r.cells()).filter(|&c| r.is_valid_cell(c)).collect()
}

/// Uniform sample of valid cells from an in-memory raster.
pub fn sample_raster(r: &Raster, n: usize, seed: u64) -> Result<PixelSample> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let valid = valid_cells(r);
    if valid.is_empty() {
        return Err(Error::NoData("raster has no valid cells".into()));
    }
    let cells: Vec<usize> = pick(valid.len(), n, seed).into_iter().map(|i| valid[i]).collect();
    let mut data = Vec::with_capacity(cells.len() * r.band_count);
    for &c in &cells {
        data.extend(r.cell_vector(c).into_iter().map(f64::from));
    }
    Ok(PixelSample {
        n: cells.len(),
        d: r.band_count,
        data,
        cells,
        seed,
    })
}

const STRIP_ROWS: usize = 256;

/// Same draw as [`sample_raster`], streamed from disk in two passes.
pub fn sample_pixels(ds: &RasterDataset, n: usize, seed: u64) -> Result<PixelSample> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let bands = ds.all_bands();
    let valid_in = |block: &crate::raster_io::PixelBlock, i: usize| (0..block.band_count).all(|b| block.band(b)[i].is_finite());
    let mut total = 0usize;
    ds.for_each_strip(STRIP_ROWS, &bands, |block| {
        total += (0..block.width * block.height).filter(|&i| valid_in(block, i)).count();
        Ok(())
    })?;
    if total == 0 {
        return Err(Error::NoData(format!("{} has no valid cells", ds.path().display())));
    }
    let picked = pick(total, n, seed);
    let mut data = Vec::with_capacity(picked.len() * ds.band_count);
    let mut cells = Vec::with_capacity(picked.len());
    let (mut ordinal, mut next) = (0usize, 0usize);
    ds.for_each_strip(STRIP_ROWS, &bands, |block| {
        for i in 0..block.width * block.height {
            if next == picked.len() {
                break;
            }
            if !valid_in(block, i) {
                continue;
            }
            if ordinal == picked[next] {
                cells.push(block.row_off * block.width + i);
                data.extend((0..block.band_count).map(|b| block.band(b)[i] as f64));
                next += 1;
            }
            ordinal += 1;
        }
        Ok(())
    })?;
    Ok(PixelSample {
        n: cells.len(),
        d: ds.band_count,
        data,
        cells,
        seed,
    })
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster_io::{open_raster, GeoTransform, WriteOptions};

    fn raster(w: usize, h: usize) -> Raster {
        let data = (0..2 * w * h)
            .map(|i| if i % 7 == 3 { f32::NAN } else { i as f32 })
            .collect();
        Raster::new(w, h, 2, GeoTransform::unit(), "", data).unwrap()
    }

    #[test]
    fn sample_everything_when_n_large() {
        let r = raster(10, 10);
        let s = sample_raster(&r, 1000, 1).unwrap();
        assert_eq!(s.cells, valid_cells(&r));
        assert!(s.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn seeds_are_deterministic_and_distinct() {
        let r = raster(40, 25);
        let a = sample_raster(&r, 100, 7).unwrap();
        assert_eq!(a, sample_raster(&r, 100, 7).unwrap());
        assert_ne!(a.cells, sample_raster(&r, 100, 8).unwrap().cells);
        assert_eq!(a.n, 100);
    }

    #[test]
    fn streamed_matches_in_memory() {
        let dir = tempfile::tempdir().unwrap();
        let r = raster(30, 300);
        let p = dir.path().join("f.tif");
        r.write(&p, WriteOptions::default()).unwrap();
        let ds = open_raster(&p).unwrap();
        assert_eq!(sample_pixels(&ds, 500, 3).unwrap(), sample_raster(&r, 500, 3).unwrap());
    }

    #[test]
    fn all_nodata_rejected() {
        let r = Raster::new(2, 2, 1, GeoTransform::unit(), "", vec![f32::NAN; 4]).unwrap();
        assert!(matches!(sample_raster(&r, 3, 0), Err(Error::NoData(_))));
    }
}
