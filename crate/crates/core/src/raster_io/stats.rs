use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RasterDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandStat {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Per-band statistics, population convention (divide by n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub bands: Vec<BandStat>,
}

impl BandStats {
    pub fn identity(band_count: usize) -> Self {
        Self {
            bands: vec![
                BandStat {
                    mean: 0.0,
                    std: 1.0,
                    min: f64::NEG_INFINITY,
                    max: f64::INFINITY,
                };
                band_count
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// Stats of values already gathered per band; NaN entries ignored.
    pub fn from_values(per_band: &[Vec<f32>]) -> Result<Self> {
        let mut bands = Vec::with_capacity(per_band.len());
        for (b, values) in per_band.iter().enumerate() {
            let valid: Vec<f64> = values.iter().filter(|v| v.is_finite()).map(|&v| v as f64).collect();
            if valid.is_empty() {
                return Err(Error::NoData(format!("band {b} is entirely nodata")));
            }
            let n = valid.len() as f64;
            let mean = valid.iter().sum::<f64>() / n;
            let var = valid.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let min = valid.iter().copied().fold(f64::INFINITY, f64::min);
            let max = valid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            // summation error can push the mean a hair outside [min, max]
            let mean = mean.clamp(min, max);
            bands.push(BandStat {
                mean,
                std: var.max(0.0).sqrt(),
                min,
                max,
            });
        }
        Ok(Self { bands })
    }
}

/// Band statistics over a seeded uniform sample of at most `max_samples`
/// pixels; every pixel is used when the raster is smaller than that.
pub fn compute_band_stats(ds: &RasterDataset, max_samples: usize, seed: u64) -> Result<BandStats> {
    if max_samples < 2 {
        return Err(Error::invalid("max_samples must be at least 2"));
    }
    let total = ds.width * ds.height;
    let bands = ds.all_bands();
    let mut per_band: Vec<Vec<f32>> = vec![Vec::with_capacity(total.min(max_samples)); ds.band_count];

    if total <= max_samples {
        ds.for_each_strip(super::TILE_SIZE, &bands, |block| {
            for (b, values) in per_band.iter_mut().enumerate() {
                values.extend_from_slice(block.band(b));
            }
            Ok(())
        })?;
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = rand::seq::index::sample(&mut rng, total, max_samples).into_vec();
        picks.sort_unstable();
        let mut next = 0;
        ds.for_each_strip(super::TILE_SIZE, &bands, |block| {
            let first = block.row_off * ds.width;
            let end = first + block.height * ds.width;
            while next < picks.len() && picks[next] < end {
                let local = picks[next] - first;
                for (b, values) in per_band.iter_mut().enumerate() {
                    values.push(block.band(b)[local]);
                }
                next += 1;
            }
            Ok(())
        })?;
    }
    BandStats::from_values(&per_band)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster_io::{open_raster, GeoTransform, Raster, WriteOptions};

    fn write(dir: &std::path::Path, w: usize, h: usize, bands: usize, data: Vec<f32>) -> RasterDataset {
        let r = Raster::new(w, h, bands, GeoTransform::unit(), "", data).unwrap();
        let p = r.write(dir.join("s.tif"), WriteOptions::default()).unwrap();
        open_raster(p).unwrap()
    }

    #[test]
    fn constant_raster() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write(dir.path(), 10, 10, 1, vec![5.0; 100]);
        let s = compute_band_stats(&ds, 1000, 0).unwrap();
        assert_eq!(s.bands[0], BandStat { mean: 5.0, std: 0.0, min: 5.0, max: 5.0 });
    }

    #[test]
    fn two_valued_population_std() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..100).map(|i| if i % 2 == 0 { 0.0 } else { 10.0 }).collect();
        let ds = write(dir.path(), 10, 10, 1, data);
        let s = compute_band_stats(&ds, 100, 0).unwrap();
        assert_eq!(s.bands[0].mean, 5.0);
        assert_eq!(s.bands[0].std, 5.0);
    }

    #[test]
    fn sampled_stats_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..300 * 300).map(|i| ((i * 7919) % 1013) as f32).collect();
        let ds = write(dir.path(), 300, 300, 1, data);
        let a = compute_band_stats(&ds, 500, 42).unwrap();
        let b = compute_band_stats(&ds, 500, 42).unwrap();
        let c = compute_band_stats(&ds, 500, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn nan_excluded_and_all_nan_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write(dir.path(), 2, 2, 2, vec![1.0, f32::NAN, 3.0, f32::NAN, f32::NAN, f32::NAN, f32::NAN, f32::NAN]);
        let err = compute_band_stats(&ds, 10, 0).unwrap_err();
        assert!(err.to_string().contains("band 1"), "{err}");
        let s = BandStats::from_values(&[vec![1.0, f32::NAN, 3.0]]).unwrap();
        assert_eq!(s.bands[0].mean, 2.0);
    }

    #[test]
    fn full_sampling_matches_brute_force() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..37 * 23 * 3).map(|i| ((i as f32) * 0.37).sin() * 100.0).collect();
        let ds = write(dir.path(), 37, 23, 3, data.clone());
        let s = compute_band_stats(&ds, 10_000, 0).unwrap();
        let n = 37 * 23;
        for b in 0..3 {
            let vals = &data[b * n..(b + 1) * n];
            let mean = vals.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = vals.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((s.bands[b].mean - mean).abs() <= 1e-6 * mean.abs().max(1.0));
            assert!((s.bands[b].std - var.sqrt()).abs() <= 1e-6 * var.sqrt());
            assert!(s.bands[b].min <= s.bands[b].mean && s.bands[b].mean <= s.bands[b].max);
        }
    }
}
