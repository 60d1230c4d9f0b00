use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster_io::{map_raster, Point, Raster, RasterDataset, RasterSpec, SampleType, WriteOptions};

/// Nodata value of threshold masks.
pub const MASK_NODATA: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Template is the normalized mean of the normalized point vectors.
    #[default]
    Mean,
    /// Score is the best cosine against any single point.
    Max,
}

/// How raw cosine in [-1, 1] becomes a score in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMapping {
    /// `max(0, cos)`.
    #[default]
    Clamp,
    /// `(cos + 1) / 2`.
    Rescale,
}

impl ScoreMapping {
    fn apply(self, cos: f64) -> f64 {
        match self {
            ScoreMapping::Clamp => cos.max(0.0),
            ScoreMapping::Rescale => (cos + 1.0) / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub points: Vec<(f64, f64)>,
    /// Unit vector per point.
    pub vectors: Vec<Vec<f64>>,
    /// Unit mean template.
    pub template: Vec<f64>,
    pub aggregation: Aggregation,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

pub fn extract_template(fr: &Raster, points: &[Point], aggregation: Aggregation) -> Result<TemplateSet> {
    if points.is_empty() {
        return Err(Error::invalid("template needs at least one point"));
    }
    let mut vectors = Vec::with_capacity(points.len());
    for p in points {
        let cell = fr.cell_of_geo(p.x, p.y)?;
        if !fr.is_valid_cell(cell) {
            return Err(Error::NoData(format!("point ({}, {}) falls on a nodata cell", p.x, p.y)));
        }
        let v: Vec<f64> = fr.cell_vector(cell).into_iter().map(f64::from).collect();
        vectors.push(unit(&v).ok_or_else(|| Error::NoData(format!("point ({}, {}) has a zero feature vector", p.x, p.y)))?);
    }
    let d = fr.band_count;
    let mut mean = vec![0f64; d];
    for v in &vectors {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= vectors.len() as f64);
    // the normalized mean is only required when it drives the score
    let template = match unit(&mean) {
        Some(t) if norm(&mean) > 1e-12 => t,
        _ if aggregation == Aggregation::Max => mean,
        _ => return Err(Error::invalid("template points cancel out: their mean feature vector has zero norm")),
    };
    Ok(TemplateSet {
        points: points.iter().map(|p| (p.x, p.y)).collect(),
        vectors,
        template,
        aggregation,
    })
}

impl TemplateSet {
    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    /// Score of one feature vector; NaN when any component is not finite.
    pub fn score(&self, v: &[f64], mapping: ScoreMapping) -> f64 {
        if v.iter().any(|x| !x.is_finite()) {
            return f64::NAN;
        }
        let n = norm(v);
        if n == 0.0 {
            return 0.0;
        }
        let cos = |t: &[f64]| (v.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() / n).clamp(-1.0, 1.0);
        let raw = match self.aggregation {
            Aggregation::Mean => cos(&self.template),
            Aggregation::Max => self.vectors.iter().map(|t| cos(t)).fold(f64::NEG_INFINITY, f64::max),
        };
        mapping.apply(raw)
    }

    fn score_block(&self, data: &[f32], cells: usize, mapping: ScoreMapping) -> Vec<f32> {
        let mut v = vec![0f64; self.dim()];
        (0..cells)
            .map(|i| {
                for (b, slot) in v.iter_mut().enumerate() {
                    *slot = data[b * cells + i] as f64;
                }
                self.score(&v, mapping) as f32
            })
            .collect()
    }

    fn check_dim(&self, bands: usize) -> Result<()> {
        if bands != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "template has {} features, raster has {bands} bands",
                self.dim()
            )));
        }
        Ok(())
    }
}

pub fn similarity_map(fr: &Raster, t: &TemplateSet, mapping: ScoreMapping) -> Result<Raster> {
    t.check_dim(fr.band_count)?;
    Raster::new(fr.width, fr.height, 1, fr.geotransform, fr.crs_id.clone(), t.score_block(&fr.data, fr.cells(), mapping))
}

/// Streamed similarity into a single-band float32 raster.
pub fn similarity_map_raster(ds: &RasterDataset, t: &TemplateSet, mapping: ScoreMapping, out_path: impl AsRef<Path>, options: WriteOptions) -> Result<PathBuf> {
    t.check_dim(ds.band_count)?;
    let spec = RasterSpec {
        band_count: 1,
        sample_type: SampleType::F32,
        nodata: Some(f64::NAN),
        ..ds.spec()
    };
    map_raster(ds, &ds.all_bands(), out_path, &spec, options, |block| {
        Ok(t.score_block(&block.data, block.width * block.height, mapping))
    })
}

/// 1 where `s >= threshold`, 0 below, NaN on nodata. Written as uint8 with
/// nodata 255.
pub fn threshold_mask(sim: &Raster, threshold: f64) -> Result<Raster> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("threshold {threshold} outside [0, 1]")));
    }
    if sim.band_count != 1 {
        return Err(Error::ShapeMismatch("threshold expects a single-band similarity raster".into()));
    }
    let data = sim
        .data
        .iter()
        .map(|&s| if s.is_nan() { f32::NAN } else if s as f64 >= threshold { 1.0 } else { 0.0 })
        .collect();
    Raster::new(sim.width, sim.height, 1, sim.geotransform, sim.crs_id.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster_io::GeoTransform;

    /// 3x1 raster, 2 bands: cells (3,4), (-4,3), (0,0).
    fn fr() -> Raster {
        Raster::new(3, 1, 2, GeoTransform::unit(), "", vec![3.0, -4.0, 0.0, 4.0, 3.0, 0.0]).unwrap()
    }

    fn pt(col: f64) -> Point {
        Point::new(col + 0.5, -0.5)
    }

    #[test]
    fn single_point_template_is_unit_cell() {
        let t = extract_template(&fr(), &[pt(0.0)], Aggregation::Mean).unwrap();
        assert_eq!(t.template, vec![0.6, 0.8]);
        assert_eq!(extract_template(&fr(), &[pt(0.0), pt(0.0)], Aggregation::Mean).unwrap().template, t.template);
    }

    #[test]
    fn orthogonal_pair_template_is_bisector() {
        let t = extract_template(&fr(), &[pt(0.0), pt(1.0)], Aggregation::Mean).unwrap();
        let c0 = 0.6 * t.template[0] + 0.8 * t.template[1];
        assert!((c0 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn scores_self_orthogonal_and_zero() {
        let t = extract_template(&fr(), &[pt(0.0)], Aggregation::Mean).unwrap();
        let s = similarity_map(&fr(), &t, ScoreMapping::Clamp).unwrap();
        assert!((s.data[0] - 1.0).abs() < 1e-6);
        assert!(s.data[1].abs() < 1e-12);
        assert_eq!(s.data[2], 0.0);
        assert_eq!(t.score(&[-0.6, -0.8], ScoreMapping::Clamp), 0.0);
        assert!(t.score(&[-0.6, -0.8], ScoreMapping::Rescale).abs() < 1e-12);
        assert!((t.score(&[-0.8, 0.6], ScoreMapping::Rescale) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn template_errors() {
        assert!(extract_template(&fr(), &[], Aggregation::Mean).is_err());
        assert!(matches!(extract_template(&fr(), &[pt(2.0)], Aggregation::Mean), Err(Error::NoData(_))));
        assert!(matches!(extract_template(&fr(), &[pt(5.0)], Aggregation::Mean), Err(Error::OutOfBounds(_))));
        let anti = Raster::new(2, 1, 1, GeoTransform::unit(), "", vec![1.0, -1.0]).unwrap();
        assert!(extract_template(&anti, &[pt(0.0), pt(1.0)], Aggregation::Mean).is_err());
        let t = extract_template(&anti, &[pt(0.0), pt(1.0)], Aggregation::Max).unwrap();
        assert_eq!(t.score(&[-3.0], ScoreMapping::Clamp), 1.0);
    }

    #[test]
    fn nan_propagates_and_threshold() {
        let r = Raster::new(3, 1, 1, GeoTransform::unit(), "", vec![0.2, f32::NAN, 0.9]).unwrap();
        let m = threshold_mask(&r, 0.5).unwrap();
        assert_eq!(m.data[0], 0.0);
        assert!(m.data[1].is_nan());
        assert_eq!(m.data[2], 1.0);
        assert_eq!(threshold_mask(&r, 0.0).unwrap().data[0], 1.0);
        assert!(threshold_mask(&r, 1.5).is_err());
    }
}
