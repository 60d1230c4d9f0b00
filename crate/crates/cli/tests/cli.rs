mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use geofeat::raster_io::{open_raster, Raster};
use serde_json::json;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = common::geofeat(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(args: &[&str]) -> (Option<i32>, String) {
    let o = common::geofeat(args);
    (o.status.code(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn read(p: &Path) -> Raster {
    open_raster(p).unwrap().read_all().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    input: PathBuf,
    cfg: PathBuf,
}

/// 128x128 3-band scene with a small, fast encoder.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let input = common::scene(&dir.path().join("scene.tif"), 128, 128, 3);
    let cfg = common::write_config(
        dir.path(),
        "cfg.json",
        json!({
            "encoder": {"stride": 32, "batch_size": 4},
            "analysis": {"kmeans": {"k": 3}, "tsne_samples": 60, "tsne": {"perplexity": 5.0, "iterations": 300}},
        }),
    );
    Fixture { dir, input, cfg }
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn features(&self) -> PathBuf {
        let out = self.path("features.tif");
        if !out.exists() {
            ok(&["features", s(&self.input), "--config", s(&self.cfg), "--out", s(&out)]);
        }
        out
    }
}

#[test]
fn features_geometry_echo_and_cleanup() {
    let dir = tempfile::tempdir().unwrap();
    let input = common::scene(&dir.path().join("big.tif"), 256, 256, 3);
    let out = dir.path().join("f.tif");
    let stdout = ok(&["features", s(&input), "--out", s(&out)]);
    assert!(stdout.contains("49 tiles"), "{stdout}");
    assert!(stdout.contains("output: 32x32x16"), "{stdout}");
    assert!(stdout.contains("batches 4/4"), "{stdout}");
    let r = read(&out);
    assert_eq!((r.width, r.height, r.band_count), (32, 32, 16));
    assert_eq!(r.crs_id, common::CRS);
    let gt = common::geotransform();
    assert_eq!((r.geotransform.pixel_width, r.geotransform.pixel_height), (80.0, -80.0));
    assert_eq!((r.geotransform.origin_x, r.geotransform.origin_y), (gt.origin_x, gt.origin_y));
    assert!(r.data.iter().all(|v| v.is_finite()));
    assert!(dir.path().join("f.tif.config.json").exists());
    assert!(!dir.path().join("f.tif.ckpt").exists());
}

#[test]
fn dry_run_prints_plan_only() {
    let f = fixture();
    let out = f.path("dry.tif");
    let stdout = ok(&["features", s(&f.input), "--config", s(&f.cfg), "--out", s(&out), "--dry-run"]);
    assert!(stdout.contains("9 tiles"), "{stdout}");
    assert!(stdout.contains("output: 16x16x16"), "{stdout}");
    assert!(stdout.contains("tile 8: col 64 row 64"), "{stdout}");
    assert!(!out.exists());
    assert!(!f.path("dry.tif.ckpt").exists());
}

#[test]
fn pause_is_inert_but_slows_down() {
    let f = fixture();
    let (a, b) = (f.path("a.tif"), f.path("b.tif"));
    let t = Instant::now();
    ok(&["features", s(&f.input), "--config", s(&f.cfg), "--out", s(&a)]);
    let fast = t.elapsed();
    let t = Instant::now();
    ok(&["features", s(&f.input), "--config", s(&f.cfg), "--out", s(&b), "--pause-ms", "50"]);
    let slow = t.elapsed();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    // 9 tiles in batches of 4 -> 3 batches, 2 pauses
    assert!(slow.as_millis() + 20 >= fast.as_millis() + 100, "{fast:?} vs {slow:?}");
}

#[test]
fn exit_codes() {
    let f = fixture();
    let out = f.path("x.tif");
    let bad = common::write_config(f.dir.path(), "bad.json", json!({"encoder": {"strid": 3}}));
    let (c, err) = code(&["features", s(&f.input), "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(c, Some(2), "{err}");
    assert!(err.contains("strid"), "{err}");

    let (c, err) = code(&["features", s(&f.path("missing.tif")), "--out", s(&out)]);
    assert_eq!(c, Some(3), "{err}");
    assert!(err.contains("raster-io"), "{err}");

    let (c, _) = code(&["features", s(&f.input), "--config", s(&f.cfg), "--out", s(&out), "--stop-after-batches", "1"]);
    assert_eq!(c, Some(4));
    assert!(f.path("x.tif.ckpt").exists());

    // resuming with a different tiling is refused
    let (c, err) = code(&["features", s(&f.input), "--out", s(&out), "--resume"]);
    assert_eq!(c, Some(2), "{err}");
    assert!(err.contains("encoder"), "{err}");

    let (c, _) = code(&["features", s(&f.input)]);
    assert_eq!(c, Some(2));
    let (c, _) = code(&["nonsense"]);
    assert_eq!(c, Some(2));
}

#[test]
fn quantized_encoder_stays_close() {
    let f = fixture();
    let q = f.path("q.tif");
    ok(&["features", s(&f.input), "--config", s(&f.cfg), "--out", s(&q), "--quantize"]);
    let (a, b) = (read(&f.features()), read(&q));
    assert_ne!(a.data, b.data);
    let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max);
    assert!(worst < 0.5, "quantized features moved by {worst}");
}

#[test]
fn band_strategies() {
    let f = fixture();
    let six = common::scene(&f.path("six.tif"), 64, 64, 6);
    let one = common::scene(&f.path("one.tif"), 64, 64, 1);
    for (input, extra) in [(&six, json!("auto")), (&one, json!("auto")), (&six, json!({"select-bands": [5, 0, 2]})), (&six, json!("pca3"))] {
        let cfg = common::write_config(f.dir.path(), "strategy.json", json!({"encoder": {"band_strategy": extra}}));
        let out = f.path("strategy.tif");
        ok(&["features", s(input), "--config", s(&cfg), "--out", s(&out)]);
        assert_eq!(read(&out).band_count, 16);
    }
    assert!(f.path("strategy.tif.pca3.tif").exists());
    let cfg = common::write_config(f.dir.path(), "none.json", json!({"encoder": {"band_strategy": "none"}}));
    let (c, err) = code(&["features", s(&six), "--config", s(&cfg), "--out", s(&f.path("n.tif"))]);
    assert_eq!(c, Some(2), "{err}");
}

#[test]
fn reduce_and_cluster_are_reproducible() {
    let f = fixture();
    let feats = f.features();
    let pca = f.path("pca.tif");
    ok(&["reduce", s(&feats), "--config", s(&f.cfg), "--out", s(&pca)]);
    let r = read(&pca);
    assert_eq!((r.width, r.band_count), (16, 3));
    assert!(f.path("pca.tif.pca.json").exists());

    let tsne_cfg = common::write_config(
        f.dir.path(),
        "tsne.json",
        json!({"analysis": {"method": "tsne", "tsne_samples": 60, "tsne": {"perplexity": 5.0, "iterations": 300}}}),
    );
    let tsne = f.path("tsne.tif");
    ok(&["reduce", s(&feats), "--config", s(&tsne_cfg), "--out", s(&tsne)]);
    let t = read(&tsne);
    assert_eq!(t.band_count, 2);
    assert_eq!(t.data.iter().filter(|v| v.is_finite()).count(), 2 * 60);

    let (c1, c2) = (f.path("c1.tif"), f.path("c2.tif"));
    ok(&["cluster", s(&feats), "--config", s(&f.cfg), "--out", s(&c1)]);
    ok(&["cluster", s(&feats), "--config", s(&f.cfg), "--out", s(&c2)]);
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
    let c = read(&c1);
    assert!(c.data.iter().all(|&v| (0.0..3.0).contains(&v)));
    let c3 = f.path("c3.tif");
    ok(&["cluster", s(&feats), "--config", s(&f.cfg), "--out", s(&c3), "--seed", "9"]);
    let model: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.path("c3.tif.kmeans.json")).unwrap()).unwrap();
    assert_eq!(model["seed"], 11);
}

#[test]
fn similarity_with_threshold() {
    let f = fixture();
    let feats = f.features();
    let r = read(&feats);
    let (x, y) = common::center(&r.geotransform, 3, 5);
    let pts = f.path("templates.geojson");
    std::fs::write(&pts, common::feature_collection(&[(x, y, "t")], &[])).unwrap();
    let out = f.path("sim.tif");
    ok(&["similarity", s(&feats), "--points", s(&pts), "--threshold", "0.9", "--out", s(&out)]);
    let sim = read(&out);
    assert!((sim.data[5 * 16 + 3] - 1.0).abs() < 1e-6);
    assert!(sim.data.iter().all(|v| (0.0..=1.0 + 1e-6).contains(v)));
    let mask = open_raster(f.path("sim.tif.mask.tif")).unwrap();
    assert_eq!(mask.nodata, Some(255.0));
    assert_eq!(mask.read_all().unwrap().data[5 * 16 + 3], 1.0);

    let outside = f.path("outside.geojson");
    std::fs::write(&outside, common::feature_collection(&[(0.0, 0.0, "t")], &[])).unwrap();
    let (c, err) = code(&["similarity", s(&feats), "--points", s(&outside), "--out", s(&out)]);
    assert_eq!(c, Some(3), "{err}");
}

#[test]
fn fit_predict_validate() {
    let f = fixture();
    let feats = f.features();
    let r = read(&feats);
    let mut pts = Vec::new();
    for i in 0..12 {
        let (col, row) = (i % 4 * 4 + 1, i / 4 * 5 + 1);
        let (x, y) = common::center(&r.geotransform, col, row);
        pts.push((x, y, if col < 8 { "west" } else { "east" }));
    }
    let splits: Vec<serde_json::Value> = (0..12).map(|i| json!(if i % 3 == 0 { "test" } else { "train" })).collect();
    let geojson = f.path("labels.geojson");
    std::fs::write(&geojson, common::feature_collection(&pts, &[("split", json!(splits))])).unwrap();
    let cfg = common::write_config(
        f.dir.path(),
        "ml.json",
        json!({"geoml": {"algorithm": {"kind": "random-forest", "n_trees": 15}, "scheme": {"kind": "random-kfold", "k": 3}}}),
    );

    let model = f.path("model.json");
    ok(&["fit", s(&feats), "--points", s(&geojson), "--config", s(&cfg), "--out", s(&model)]);
    let pred = f.path("pred.tif");
    ok(&["predict", s(&feats), "--model", s(&model), "--out", s(&pred)]);
    let p = open_raster(&pred).unwrap();
    assert_eq!(p.nodata, Some(-1.0));
    let p = p.read_all().unwrap();
    let labels: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.path("pred.tif.labels.json")).unwrap()).unwrap();
    assert_eq!(labels["0"], "west");
    assert_eq!(p.data[16 + 1], 0.0);

    let report = f.path("cv.json");
    let stdout = ok(&["validate", s(&feats), "--points", s(&geojson), "--config", s(&cfg), "--out", s(&report)]);
    assert!(stdout.contains("fold 0"), "{stdout}");
    let cv: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(cv["folds"].as_array().unwrap().len(), 3);
    let sizes: Vec<u64> = cv["folds"].as_array().unwrap().iter().map(|f| f["test_size"].as_u64().unwrap()).collect();
    assert_eq!(sizes, vec![4, 4, 4]);

    let split_cfg = common::write_config(f.dir.path(), "split.json", json!({"geoml": {"algorithm": {"kind": "knn", "k": 1}, "scheme": {"kind": "column-split"}}}));
    let stdout = ok(&["validate", s(&feats), "--points", s(&geojson), "--config", s(&split_cfg)]);
    let cv: serde_json::Value = serde_json::from_str(&stdout[stdout.find('{').unwrap()..]).unwrap();
    assert_eq!(cv["folds"][0]["test_size"], 4);

    let missing = common::write_config(f.dir.path(), "fold.json", json!({"geoml": {"scheme": {"kind": "column-fold"}}}));
    let (c, err) = code(&["validate", s(&feats), "--points", s(&geojson), "--config", s(&missing)]);
    assert_ne!(c, Some(0), "{err}");
    assert!(err.contains("geoml"), "{err}");
}
