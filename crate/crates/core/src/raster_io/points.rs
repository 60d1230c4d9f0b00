use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub properties: Map<String, Value>,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            properties: Map::new(),
        }
    }

    pub fn with_property(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.properties.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCollection {
    pub points: Vec<Point>,
    /// Declared CRS (legacy GeoJSON `crs` member), normalized to `EPSG:code`.
    pub crs_id: Option<String>,
}

impl PointCollection {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fails when the collection declares a CRS different from the raster's.
    pub fn check_crs(&self, raster_crs: &str) -> Result<()> {
        match &self.crs_id {
            Some(c) if !raster_crs.is_empty() && c != raster_crs => Err(Error::invalid(format!(
                "points CRS {c} does not match raster CRS {raster_crs}"
            ))),
            _ => Ok(()),
        }
    }
}

fn normalize_crs(name: &str) -> String {
    // urn:ogc:def:crs:EPSG::32631, EPSG:32631
    if let Some(code) = name.rsplit(':').next().filter(|c| c.chars().all(|ch| ch.is_ascii_digit()) && !c.is_empty()) {
        if name.to_ascii_uppercase().contains("EPSG") {
            return format!("EPSG:{code}");
        }
    }
    if name.contains("CRS84") {
        return "EPSG:4326".to_string();
    }
    name.to_string()
}

pub fn parse_points(text: &str) -> Result<PointCollection> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Points(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::Points("expected a FeatureCollection".into()));
    }
    let crs_id = root
        .pointer("/crs/properties/name")
        .and_then(Value::as_str)
        .map(normalize_crs);
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Points("missing features array".into()))?;
    let mut points = Vec::with_capacity(features.len());
    for (i, feat) in features.iter().enumerate() {
        let geom = feat
            .get("geometry")
            .ok_or_else(|| Error::Points(format!("feature {i} has no geometry")))?;
        let kind = geom.get("type").and_then(Value::as_str).unwrap_or("");
        if kind != "Point" {
            return Err(Error::Points(format!("feature {i} is a {kind}; points only")));
        }
        let coords = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .filter(|c| c.len() >= 2)
            .ok_or_else(|| Error::Points(format!("feature {i} has malformed coordinates")))?;
        let x = coords[0].as_f64();
        let y = coords[1].as_f64();
        let (Some(x), Some(y)) = (x, y) else {
            return Err(Error::Points(format!("feature {i} has non-numeric coordinates")));
        };
        let properties = match feat.get("properties") {
            Some(Value::Object(m)) => m.clone(),
            Some(Value::Null) | None => Map::new(),
            Some(_) => return Err(Error::Points(format!("feature {i} properties must be an object"))),
        };
        points.push(Point { x, y, properties });
    }
    Ok(PointCollection { points, crs_id })
}

pub fn read_points(path: impl AsRef<Path>) -> Result<PointCollection> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;
    parse_points(&text)
}

/// Serialize points as a GeoJSON FeatureCollection.
pub fn points_to_geojson(points: &[Point], crs_id: Option<&str>) -> Value {
    let features: Vec<Value> = points
        .iter()
        .map(|p| {
            serde_json::json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [p.x, p.y]},
                "properties": p.properties,
            })
        })
        .collect();
    let mut root = serde_json::json!({"type": "FeatureCollection", "features": features});
    if let Some(crs) = crs_id {
        root["crs"] = serde_json::json!({"type": "name", "properties": {"name": crs}});
    }
    root
}
