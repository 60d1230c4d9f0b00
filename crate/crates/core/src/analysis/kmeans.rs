use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sq_dist, PixelSample};
use crate::error::{Error, Result};
use crate::raster_io::{map_raster, Raster, RasterDataset, RasterSpec, SampleType, WriteOptions};

/// Nodata value of class rasters.
pub const CLASS_NODATA: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 5,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub seed: u64,
    pub iterations: usize,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

/// Nearest centroid and its squared distance; ties go to the lower index.
fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(centroid, v);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(s: &PixelSample, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = s.n;
    let mut centroids = vec![s.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(s.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave the target just past the last positive weight
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        let c = s.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(s.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations until no centroid moves
/// more than `tol` or `max_iter` updates were made.
pub fn fit_kmeans(sample: &PixelSample, params: &KMeansParams, seed: u64) -> Result<KMeansModel> {
    let (n, d, k) = (sample.n, sample.d, params.k);
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k={k} outside 1..={n}")));
    }
    sample.check_finite()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(sample, k, &mut rng);
    let mut history: Vec<f64> = Vec::new();
    let mut labels = vec![0usize; n];
    let mut dists = vec![0f64; n];
    let mut previous: Option<Vec<Vec<f64>>> = None;
    let mut updates = 0;
    let mut shift = f64::INFINITY;
    loop {
        for i in 0..n {
            (labels[i], dists[i]) = nearest(&centroids, sample.row(i));
        }
        let inertia: f64 = dists.iter().sum();
        if let (Some(&last), Some(prev)) = (history.last(), previous.take()) {
            if inertia > last {
                // only floating point noise can raise inertia; keep the better fit
                centroids = prev;
                break;
            }
        }
        history.push(inertia);
        if shift < params.tol || updates == params.max_iter {
            break;
        }

        let mut sums = vec![vec![0f64; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(sample.row(i)) {
                *s += v;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| if c == 0 { s } else { s.into_iter().map(|v| v / c as f64).collect() })
            .collect();
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n).fold(0, |b, i| if dists[i] > dists[b] { i } else { b });
                next[c] = sample.row(far).to_vec();
                dists[far] = 0.0;
            }
        }
        shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        previous = Some(std::mem::replace(&mut centroids, next));
        updates += 1;
    }
    let inertia = (0..n).map(|i| nearest(&centroids, sample.row(i)).1).sum();
    Ok(KMeansModel {
        k,
        centroids,
        inertia,
        seed,
        iterations: updates,
        inertia_history: history,
    })
}

impl KMeansModel {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn predict(&self, v: &[f64]) -> usize {
        nearest(&self.centroids, v).0
    }

    fn predict_block(&self, data: &[f32], cells: usize) -> Vec<f32> {
        let d = self.dim();
        let mut v = vec![0f64; d];
        (0..cells)
            .map(|i| {
                for (b, slot) in v.iter_mut().enumerate() {
                    *slot = data[b * cells + i] as f64;
                }
                if v.iter().all(|x| x.is_finite()) {
                    self.predict(&v) as f32
                } else {
                    f32::NAN
                }
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|_| Error::NotFound(path.to_path_buf()))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn check_dim(model: &KMeansModel, bands: usize) -> Result<()> {
    if model.dim() != bands {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} bands, raster has {bands}",
            model.dim()
        )));
    }
    Ok(())
}

/// Cluster index per cell, NaN where the cell is nodata.
pub fn predict_kmeans(r: &Raster, model: &KMeansModel) -> Result<Raster> {
    check_dim(model, r.band_count)?;
    Raster::new(r.width, r.height, 1, r.geotransform, r.crs_id.clone(), model.predict_block(&r.data, r.cells()))
}

/// Streamed prediction into an int16 raster with nodata -1.
pub fn predict_kmeans_raster(ds: &RasterDataset, model: &KMeansModel, out_path: impl AsRef<Path>, options: WriteOptions) -> Result<PathBuf> {
    check_dim(model, ds.band_count)?;
    let spec = RasterSpec {
        band_count: 1,
        sample_type: SampleType::I16,
        nodata: Some(CLASS_NODATA),
        ..ds.spec()
    };
    map_raster(ds, &ds.all_bands(), out_path, &spec, options, |block| {
        Ok(model.predict_block(&block.data, block.width * block.height))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_points() -> PixelSample {
        PixelSample::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]]).unwrap()
    }

    fn params(k: usize) -> KMeansParams {
        KMeansParams { k, ..KMeansParams::default() }
    }

    #[test]
    fn four_point_fixture() {
        for seed in 0..20 {
            let m = fit_kmeans(&four_points(), &params(2), seed).unwrap();
            assert_eq!(m.inertia, 1.0, "seed {seed}");
            let mut c = m.centroids.clone();
            c.sort_by(|a, b| a[0].total_cmp(&b[0]));
            assert_eq!(c, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
        }
    }

    #[test]
    fn single_cluster_is_mean() {
        let s = four_points();
        let m = fit_kmeans(&s, &params(1), 3).unwrap();
        assert_eq!(m.centroids, vec![vec![5.0, 0.5]]);
        assert!((m.inertia - 101.0).abs() < 1e-9);
    }

    #[test]
    fn k_equals_n_is_zero_inertia() {
        let m = fit_kmeans(&four_points(), &params(4), 1).unwrap();
        assert_eq!(m.inertia, 0.0);
        assert!(fit_kmeans(&four_points(), &params(5), 1).is_err());
        assert!(fit_kmeans(&four_points(), &params(0), 1).is_err());
    }

    #[test]
    fn duplicate_points_leave_no_empty_cluster() {
        let s = PixelSample::from_rows(&[vec![1.0], vec![1.0], vec![1.0], vec![5.0]]).unwrap();
        let m = fit_kmeans(&s, &params(3), 0).unwrap();
        assert_eq!(m.centroids.len(), 3);
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn prediction_ties_and_nodata() {
        let m = KMeansModel {
            k: 2,
            centroids: vec![vec![0.0], vec![2.0]],
            inertia: 0.0,
            seed: 0,
            iterations: 0,
            inertia_history: vec![],
        };
        assert_eq!(m.predict(&[1.0]), 0);
        let r = Raster::new(3, 1, 1, crate::raster_io::GeoTransform::unit(), "", vec![1.9, f32::NAN, -4.0]).unwrap();
        let out = predict_kmeans(&r, &m).unwrap();
        assert_eq!(out.data[0], 1.0);
        assert!(out.data[1].is_nan());
        assert_eq!(out.data[2], 0.0);
    }
}
