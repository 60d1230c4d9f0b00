#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geofeat::raster_io::{GeoTransform, Raster, WriteOptions};

pub const CRS: &str = "EPSG:32631";

pub fn geotransform() -> GeoTransform {
    GeoTransform::new(500_000.0, 4_100_000.0, 10.0, -10.0)
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_geofeat"))
}

pub fn geofeat(args: &[&str]) -> Output {
    Command::new(bin()).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

pub fn write_raster(path: &Path, w: usize, h: usize, bands: usize, f: impl Fn(usize, usize, usize) -> f32) -> PathBuf {
    let mut data = Vec::with_capacity(w * h * bands);
    for b in 0..bands {
        for y in 0..h {
            for x in 0..w {
                data.push(f(b, x, y));
            }
        }
    }
    Raster::new(w, h, bands, geotransform(), CRS, data)
        .unwrap()
        .write(path, WriteOptions::default())
        .unwrap()
}

/// Deterministic pseudo-noise in [-0.5, 0.5).
pub fn noise(b: usize, x: usize, y: usize) -> f32 {
    let mut z = (b as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((x as u64) << 20) ^ (y as u64);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 40) as f32 / (1u64 << 24) as f32 - 0.5
}

/// Smooth gradients plus noise, values roughly in [0, 255].
pub fn scene(path: &Path, w: usize, h: usize, bands: usize) -> PathBuf {
    write_raster(path, w, h, bands, |b, x, y| {
        let fx = x as f32 / w as f32;
        let fy = y as f32 / h as f32;
        let base = 100.0 + 60.0 * (6.0 * fx + b as f32).sin() * (4.0 * fy).cos() + 40.0 * fx * fy;
        base + 20.0 * noise(b, x, y)
    })
}

/// Which planted texture covers pixel (x, y): 64 px blocks in a checkerboard.
pub fn planted_class(x: usize, y: usize) -> usize {
    (x / 64 + y / 64) % 2
}

/// Two textures built from the same three periodic components, laid along
/// x (class 0) or along y (class 1). Each of the `bands` bands mixes the
/// components with its own weights and adds a little noise, so a 3-component
/// PCA keeps the texture and drops the noise.
pub fn two_textures(path: &Path, w: usize, h: usize, bands: usize) -> PathBuf {
    const MIX: [[f32; 3]; 4] = [[1.0, 0.2, 0.1], [0.3, 1.0, 0.2], [0.1, 0.4, 1.0], [0.5, 0.5, 0.5]];
    write_raster(path, w, h, bands, |b, x, y| {
        let along = if planted_class(x, y) == 0 { x } else { y } as f32;
        let q = std::f32::consts::FRAC_PI_2 * along;
        let latent = [q.cos(), q.sin(), (q / 2.0).cos()];
        let m = MIX[b % 4];
        120.0 + 40.0 * (m[0] * latent[0] + m[1] * latent[1] + m[2] * latent[2]) + 4.0 * noise(b, x, y)
    })
}

pub fn feature_collection(points: &[(f64, f64, &str)], extra: &[(&str, serde_json::Value)]) -> String {
    let feats: Vec<serde_json::Value> = points
        .iter()
        .enumerate()
        .map(|(i, (x, y, label))| {
            let mut props = serde_json::Map::new();
            props.insert("label".into(), (*label).into());
            for (k, v) in extra {
                props.insert((*k).into(), v.get(i).cloned().unwrap_or(serde_json::Value::Null));
            }
            serde_json::json!({"type": "Feature", "geometry": {"type": "Point", "coordinates": [x, y]}, "properties": props})
        })
        .collect();
    serde_json::json!({"type": "FeatureCollection", "features": feats}).to_string()
}

/// Geo coordinates of the center of cell (col, row) of a raster with `gt`.
pub fn center(gt: &GeoTransform, col: usize, row: usize) -> (f64, f64) {
    gt.geo_of_pixel(col as f64 + 0.5, row as f64 + 0.5)
}

pub fn write_config(dir: &Path, name: &str, json: serde_json::Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, json.to_string()).unwrap();
    p
}
