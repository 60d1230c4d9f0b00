use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::raster_io::{Point, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Design matrix built from labeled points, rows in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    /// Dense label codes in first-appearance order.
    pub y: Vec<usize>,
    pub classes: Vec<String>,
    pub cells: Vec<usize>,
    pub folds: Vec<Option<i64>>,
    pub splits: Vec<Option<Split>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Rows `idx` as a new dataset sharing the class vocabulary.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes.clone(),
            cells: idx.iter().map(|&i| self.cells[i]).collect(),
            folds: idx.iter().map(|&i| self.folds[i]).collect(),
            splits: idx.iter().map(|&i| self.splits[i]).collect(),
        }
    }
}

/// Label text of a property value; strings verbatim, other scalars via JSON.
fn label_text(v: &Value) -> Option<String> {
    match v {
        Value::Null | Value::Array(_) | Value::Object(_) => None,
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

fn fold_value(i: usize, v: &Value) -> Result<i64> {
    let bad = || Error::Points(format!("point {i}: fold must be an integer, got {v}"));
    match v {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64))
            .ok_or_else(bad),
        Value::String(s) => s.trim().parse().map_err(|_| bad()),
        _ => Err(bad()),
    }
}

fn split_value(i: usize, v: &Value) -> Result<Split> {
    match v.as_str().map(|s| s.trim().to_ascii_lowercase()).as_deref() {
        Some("train") => Ok(Split::Train),
        Some("test") => Ok(Split::Test),
        _ => Err(Error::Points(format!("point {i}: split must be \"train\" or \"test\", got {v}"))),
    }
}

pub fn build_dataset(fr: &Raster, points: &[Point], label_field: &str) -> Result<Dataset> {
    let mut ds = Dataset {
        x: Vec::with_capacity(points.len()),
        y: Vec::with_capacity(points.len()),
        classes: Vec::new(),
        cells: Vec::with_capacity(points.len()),
        folds: Vec::with_capacity(points.len()),
        splits: Vec::with_capacity(points.len()),
    };
    let mut codes: HashMap<String, usize> = HashMap::new();
    let mut seen: HashMap<usize, usize> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        let label = p
            .properties
            .get(label_field)
            .and_then(label_text)
            .ok_or_else(|| Error::Points(format!("point {i} has no '{label_field}' property")))?;
        let cell = fr.cell_of_geo(p.x, p.y)?;
        if !fr.is_valid_cell(cell) {
            return Err(Error::NoData(format!("point {i} ({}, {}) falls on a nodata cell", p.x, p.y)));
        }
        if let Some(first) = seen.insert(cell, i) {
            log::warn!("points {first} and {i} fall in the same feature cell; both are kept");
        }
        let next = codes.len();
        let code = *codes.entry(label.clone()).or_insert(next);
        if code == ds.classes.len() {
            ds.classes.push(label);
        }
        ds.x.push(fr.cell_vector(cell).into_iter().map(f64::from).collect());
        ds.y.push(code);
        ds.cells.push(cell);
        ds.folds.push(p.properties.get("fold").filter(|v| !v.is_null()).map(|v| fold_value(i, v)).transpose()?);
        ds.splits.push(p.properties.get("split").filter(|v| !v.is_null()).map(|v| split_value(i, v)).transpose()?);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster_io::GeoTransform;

    fn fr() -> Raster {
        let data = (0..2 * 4 * 3).map(|i| i as f32).collect();
        Raster::new(4, 3, 2, GeoTransform::new(100.0, 50.0, 10.0, -10.0), "", data).unwrap()
    }

    #[test]
    fn codes_follow_first_appearance() {
        let pts = vec![
            Point::new(105.0, 45.0).with_property("label", "water"),
            Point::new(115.0, 45.0).with_property("label", "forest"),
            Point::new(125.0, 35.0).with_property("label", "water").with_property("fold", 2),
            Point::new(135.0, 25.0).with_property("label", 7).with_property("split", "test"),
        ];
        let ds = build_dataset(&fr(), &pts, "label").unwrap();
        assert_eq!(ds.classes, vec!["water", "forest", "7"]);
        assert_eq!(ds.y, vec![0, 1, 0, 2]);
        assert_eq!(ds.x[1], vec![1.0, 13.0]);
        assert_eq!(ds.folds, vec![None, None, Some(2), None]);
        assert_eq!(ds.splits[3], Some(Split::Test));
    }

    #[test]
    fn corner_point_uses_floor_and_duplicates_kept() {
        let pts = vec![
            Point::new(110.0, 40.0).with_property("label", "a"),
            Point::new(111.0, 39.0).with_property("label", "b"),
        ];
        let ds = build_dataset(&fr(), &pts, "label").unwrap();
        assert_eq!(ds.cells, vec![5, 5]);
        assert_eq!(ds.x[0], ds.x[1]);
    }

    #[test]
    fn errors() {
        let missing = vec![Point::new(105.0, 45.0)];
        assert!(matches!(build_dataset(&fr(), &missing, "label"), Err(Error::Points(_))));
        let outside = vec![Point::new(5.0, 45.0).with_property("label", "a")];
        assert!(matches!(build_dataset(&fr(), &outside, "label"), Err(Error::OutOfBounds(_))));
        let mut r = fr();
        r.data[0] = f32::NAN;
        let on_nodata = vec![Point::new(105.0, 45.0).with_property("label", "a")];
        assert!(matches!(build_dataset(&r, &on_nodata, "label"), Err(Error::NoData(_))));
        let bad_split = vec![Point::new(105.0, 45.0).with_property("label", "a").with_property("split", "val")];
        assert!(build_dataset(&fr(), &bad_split, "label").is_err());
    }
}
