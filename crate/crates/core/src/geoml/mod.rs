//! Similarity search and supervised classification over feature rasters.

mod cv;
mod dataset;
mod forest;
mod knn;
mod similarity;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use cv::{cross_validate, kfold_indices, score, CvReport, CvScheme, FoldReport, MeanStd};
pub use dataset::{build_dataset, Dataset, Split};
pub use forest::{fit_random_forest, ForestParams, Node, RandomForest, Tree};
pub use knn::{fit_knn, KnnModel, Metric};
pub use similarity::{
    extract_template, similarity_map, similarity_map_raster, threshold_mask, Aggregation, ScoreMapping, TemplateSet, MASK_NODATA,
};

use crate::analysis::CLASS_NODATA;
use crate::error::{Error, Result};
use crate::raster_io::{map_raster, Raster, RasterDataset, RasterSpec, SampleType, WriteOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Knn {
        k: usize,
        #[serde(default)]
        metric: Metric,
    },
    RandomForest(ForestParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Classifier {
    Knn(KnnModel),
    RandomForest(RandomForest),
}

/// A fitted classifier with its label vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub classes: Vec<String>,
    pub dim: usize,
    pub model: Classifier,
}

pub fn fit_classifier(ds: &Dataset, spec: &AlgorithmSpec, seed: u64) -> Result<ClassifierModel> {
    if ds.is_empty() {
        return Err(Error::invalid("no labeled points"));
    }
    let model = match spec {
        AlgorithmSpec::Knn { k, metric } => Classifier::Knn(fit_knn(ds, *k, *metric)?),
        AlgorithmSpec::RandomForest(params) => Classifier::RandomForest(fit_random_forest(ds, params, seed)?),
    };
    Ok(ClassifierModel {
        classes: ds.classes.clone(),
        dim: ds.dim(),
        model,
    })
}

impl ClassifierModel {
    pub fn predict(&self, v: &[f64]) -> usize {
        match &self.model {
            Classifier::Knn(m) => m.predict(v),
            Classifier::RandomForest(m) => m.predict(v),
        }
    }

    fn predict_block(&self, data: &[f32], cells: usize) -> Vec<f32> {
        let mut v = vec![0f64; self.dim];
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

    fn check_dim(&self, bands: usize) -> Result<()> {
        if bands != self.dim {
            return Err(Error::ShapeMismatch(format!("model expects {} bands, raster has {bands}", self.dim)));
        }
        Ok(())
    }

    pub fn predict_raster(&self, fr: &Raster) -> Result<Raster> {
        self.check_dim(fr.band_count)?;
        Raster::new(fr.width, fr.height, 1, fr.geotransform, fr.crs_id.clone(), self.predict_block(&fr.data, fr.cells()))
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

/// `<raster>.labels.json` next to a class raster.
pub fn labels_sidecar_path(raster: &Path) -> PathBuf {
    let mut s = raster.as_os_str().to_owned();
    s.push(".labels.json");
    PathBuf::from(s)
}

pub fn write_labels_sidecar(raster: &Path, classes: &[String]) -> Result<PathBuf> {
    let map: BTreeMap<usize, &str> = classes.iter().enumerate().map(|(i, c)| (i, c.as_str())).collect();
    let path = labels_sidecar_path(raster);
    std::fs::write(&path, serde_json::to_vec_pretty(&map)?)?;
    Ok(path)
}

/// Streamed prediction into an int16 class raster (nodata -1) plus its
/// label sidecar.
pub fn predict_class_raster(ds: &RasterDataset, model: &ClassifierModel, out_path: impl AsRef<Path>, options: WriteOptions) -> Result<PathBuf> {
    model.check_dim(ds.band_count)?;
    let spec = RasterSpec {
        band_count: 1,
        sample_type: SampleType::I16,
        nodata: Some(CLASS_NODATA),
        ..ds.spec()
    };
    let out = map_raster(ds, &ds.all_bands(), out_path, &spec, options, |block| {
        Ok(model.predict_block(&block.data, block.width * block.height))
    })?;
    write_labels_sidecar(&out, &model.classes)?;
    Ok(out)
}
