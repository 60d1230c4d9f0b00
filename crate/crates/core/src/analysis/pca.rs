use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::PixelSample;
use crate::error::{Error, Result};
use crate::raster_io::{map_raster, Raster, RasterDataset, RasterSpec, SampleType, WriteOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` rows of length `d`, orthonormal.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

/// Index of the largest-magnitude entry; the first wins on ties.
fn dominant_index(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

/// Eigendecomposition of the population covariance of `sample`.
///
/// Components are ordered by descending eigenvalue. Eigenvalues equal within
/// a relative 1e-10 are ordered by the position of their dominant entry.
/// Each component is signed so its dominant entry is positive.
pub fn fit_pca(sample: &PixelSample, k: usize) -> Result<PcaModel> {
    let (n, d) = (sample.n, sample.d);
    if n < 2 {
        return Err(Error::invalid("PCA needs at least 2 samples"));
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(Error::invalid(format!("k={k} outside 1..={}", (n - 1).min(d))));
    }
    sample.check_finite()?;

    let mut mean = vec![0f64; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(sample.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0f64; d];
    for i in 0..n {
        for (c, (v, m)) in centered.iter_mut().zip(sample.row(i).iter().zip(&mean)) {
            *c = v - m;
        }
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / n as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
        .map(|j| {
            let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            if v[dominant_index(&v)] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (eig.eigenvalues[j].max(0.0), v)
        })
        .collect();
    let scale = pairs.iter().fold(0f64, |m, p| m.max(p.0)).max(f64::MIN_POSITIVE);
    pairs.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= 1e-10 * scale {
            dominant_index(&a.1).cmp(&dominant_index(&b.1))
        } else {
            b.0.total_cmp(&a.0)
        }
    });
    pairs.truncate(k);
    Ok(PcaModel {
        mean,
        explained_variance: pairs.iter().map(|p| p.0).collect(),
        components: pairs.into_iter().map(|p| p.1).collect(),
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// `(v - mean) . components^T`.
    pub fn transform(&self, v: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(v.iter().zip(&self.mean)).map(|(c, (v, m))| c * (v - m)).sum())
            .collect()
    }

    pub fn inverse_transform(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(y) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += w * ci;
            }
        }
        out
    }

    /// Project a band-major block of `cells` cells; invalid cells map to NaN.
    fn project_block(&self, data: &[f32], cells: usize) -> Vec<f32> {
        let d = self.dim();
        let mut out = vec![f32::NAN; self.k() * cells];
        let mut v = vec![0f64; d];
        for i in 0..cells {
            for (b, slot) in v.iter_mut().enumerate() {
                *slot = data[b * cells + i] as f64;
            }
            if v.iter().any(|x| !x.is_finite()) {
                continue;
            }
            for (j, y) in self.transform(&v).into_iter().enumerate() {
                out[j * cells + i] = y as f32;
            }
        }
        out
    }

    pub fn transform_raster(&self, r: &Raster) -> Result<Raster> {
        if r.band_count != self.dim() {
            return Err(dim_mismatch(self.dim(), r.band_count));
        }
        let data = self.project_block(&r.data, r.cells());
        Raster::new(r.width, r.height, self.k(), r.geotransform, r.crs_id.clone(), data)
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

fn dim_mismatch(model: usize, raster: usize) -> Error {
    Error::ShapeMismatch(format!("model expects {model} bands, raster has {raster}"))
}

/// Stream `ds` through the model into a `k`-band float32 raster.
pub fn transform_raster_pca(ds: &RasterDataset, model: &PcaModel, out_path: impl AsRef<Path>, options: WriteOptions) -> Result<PathBuf> {
    if ds.band_count != model.dim() {
        return Err(dim_mismatch(model.dim(), ds.band_count));
    }
    let spec = RasterSpec {
        band_count: model.k(),
        sample_type: SampleType::F32,
        nodata: Some(f64::NAN),
        ..ds.spec()
    };
    map_raster(ds, &ds.all_bands(), out_path, &spec, options, |block| {
        Ok(model.project_block(&block.data, block.width * block.height))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: &[&[f64]]) -> PixelSample {
        PixelSample::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn axis_aligned_example() {
        let s = sample(&[&[1.0, 0.0], &[-1.0, 0.0], &[2.0, 0.0], &[-2.0, 0.0]]);
        let m = fit_pca(&s, 1).unwrap();
        assert_eq!(m.components, vec![vec![1.0, 0.0]]);
        assert!((m.explained_variance[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn isotropic_tie_is_ordered_by_dominant_axis() {
        let s = sample(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]);
        let m = fit_pca(&s, 2).unwrap();
        assert_eq!(dominant_index(&m.components[0]), 0);
        assert_eq!(dominant_index(&m.components[1]), 1);
        assert!(m.components.iter().all(|c| c[dominant_index(c)] > 0.0));
    }

    #[test]
    fn k_bounds() {
        let s = sample(&[&[1.0, 2.0, 3.0], &[0.0, 1.0, 5.0]]);
        assert!(fit_pca(&s, 1).is_ok());
        assert!(fit_pca(&s, 2).is_err());
        assert!(fit_pca(&s, 0).is_err());
        assert!(fit_pca(&sample(&[&[1.0]]), 1).is_err());
    }

    #[test]
    fn mean_cell_projects_to_zero_and_nan_stays() {
        let s = sample(&[&[1.0, 2.0], &[3.0, 1.0], &[0.0, 0.0], &[4.0, 5.0]]);
        let m = fit_pca(&s, 2).unwrap();
        let r = Raster::new(2, 1, 2, crate::raster_io::GeoTransform::unit(), "", vec![2.0, f32::NAN, 2.0, 1.0]).unwrap();
        let out = m.transform_raster(&r).unwrap();
        assert!(out.get(0, 0, 0).abs() < 1e-6 && out.get(1, 0, 0).abs() < 1e-6);
        assert!(out.get(0, 1, 0).is_nan());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let s = sample(&[&[0.1, 0.7], &[0.3, -1.1], &[2.2, 0.25], &[-0.9, 0.4]]);
        let m = fit_pca(&s, 2).unwrap();
        let back: PcaModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
