//! One function per subcommand. The service calls the same functions, so a
//! job and the matching CLI run write identical files.

use std::path::{Path, PathBuf};

use geofeat::analysis::{
    fit_kmeans, fit_pca, predict_kmeans_raster, sample_pixels, transform_raster_pca, tsne_embed, KMeansModel, TsneResult,
};
use geofeat::encoder::{
    adapt_input_layer, build_reference_vit, load_external_model, quantize_weights, run_inference, BandStrategy, InferenceOptions,
    ModelWeights, Progress, ReferenceVit, RunParams, TileEncoder,
};
use geofeat::geoml::{
    build_dataset, cross_validate, extract_template, fit_classifier, predict_class_raster, similarity_map_raster, threshold_mask,
    ClassifierModel, CvReport, TemplateSet, MASK_NODATA,
};
use geofeat::mosaic::{mosaic_inference, output_grid_geometry, FeatureAccumulator};
use geofeat::raster_io::{
    compute_band_stats, open_raster, read_points, BandStats, Point, Raster, RasterDataset, SampleType,
};
use geofeat::tiler::{plan_tiles, TilePlan};
use serde::Serialize;

use crate::config::{
    suffixed, BandStrategyConfig, PipelineConfig, ReduceMethod, SEED_FOREST, SEED_KMEANS, SEED_PCA3, SEED_SAMPLE, SEED_STATS, SEED_TSNE,
};
use crate::error::{CliError, CliResult, Stage};

/// What a running pipeline tells its caller.
#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Stage(&'static str),
    Progress(Progress),
    Info(String),
}

pub type Reporter<'a> = &'a mut dyn FnMut(Report);

/// Flags that change how `features` runs but not what it produces.
#[derive(Debug, Clone, Default)]
pub struct FeatureFlags {
    pub resume: bool,
    pub dry_run: bool,
    pub stop_after_batches: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeaturesSummary {
    pub tiles: usize,
    pub batches: usize,
    pub out_width: usize,
    pub out_height: usize,
    pub dim: usize,
    pub reused_batches: usize,
    pub computed_batches: usize,
    pub output: Option<PathBuf>,
}

fn open(path: &Path) -> CliResult<RasterDataset> {
    open_raster(path).stage("raster-io")
}

fn require<'a>(value: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::config(format!("config: no {what} given (positional argument or input.{what})")))
}

/// Source raster for `features`, after the optional pca3 reduction.
fn prepare_source(cfg: &PipelineConfig, input: &Path, out: &Path, dry_run: bool, report: Reporter) -> CliResult<RasterDataset> {
    let ds = open(input)?;
    if cfg.encoder.band_strategy != BandStrategyConfig::Pca3 || dry_run {
        return Ok(ds);
    }
    report(Report::Stage("pca3"));
    let sample = sample_pixels(&ds, cfg.analysis.sample_size, cfg.seed.wrapping_add(SEED_PCA3)).stage("analysis")?;
    let model = fit_pca(&sample, 3).stage("analysis")?;
    let path = suffixed(out, ".pca3.tif");
    transform_raster_pca(&ds, &model, &path, cfg.output.write_options()).stage("analysis")?;
    model.save(suffixed(out, ".pca3.json")).stage("analysis")?;
    report(Report::Info(format!("pca3: {} bands -> 3, written {}", ds.band_count, path.display())));
    open(&path)
}

fn base_weights(cfg: &PipelineConfig) -> CliResult<Option<ModelWeights>> {
    if cfg.encoder.model == "reference" {
        return build_reference_vit(&cfg.encoder.vit).stage("encoder").map(Some);
    }
    let path = Path::new(&cfg.encoder.model);
    if ModelWeights::is_serialized_model(path) {
        return ModelWeights::load(path).stage("encoder").map(Some);
    }
    Ok(None)
}

/// Encoder for a raster with `raster_bands` bands, plus the raster bands it reads.
pub fn build_encoder(cfg: &PipelineConfig, raster_bands: usize) -> CliResult<(Box<dyn TileEncoder>, Vec<usize>, String)> {
    let Some(weights) = base_weights(cfg)? else {
        let enc = load_external_model(&cfg.encoder.model).stage("encoder")?;
        if cfg.encoder.quantize {
            return Err(CliError::config("encoder: quantization needs a serialized reference model"));
        }
        let strategy = cfg.encoder.band_strategy.resolve(raster_bands, enc.in_bands());
        let bands = match strategy {
            BandStrategy::SelectBands(l) => l,
            BandStrategy::None if raster_bands == enc.in_bands() => (0..raster_bands).collect(),
            other => {
                return Err(CliError::config(format!(
                    "encoder: band strategy {} is not available for external models",
                    other.label()
                )))
            }
        };
        return Ok((enc, bands, "external".into()));
    };
    let strategy = cfg.encoder.band_strategy.resolve(raster_bands, weights.config.in_bands);
    let mut adapted = adapt_input_layer(&weights, raster_bands, &strategy).stage("encoder")?;
    if cfg.encoder.quantize {
        adapted = quantize_weights(&adapted).stage("encoder")?.dequantize();
    }
    let label = match cfg.encoder.band_strategy {
        BandStrategyConfig::Pca3 => "pca3".to_string(),
        _ => strategy.label(),
    };
    let bands = strategy.raster_bands(raster_bands);
    Ok((Box::new(ReferenceVit::new(adapted).stage("encoder")?), bands, label))
}

fn selected_stats(ds: &RasterDataset, bands: &[usize], cfg: &PipelineConfig) -> CliResult<BandStats> {
    let all = compute_band_stats(ds, cfg.encoder.stats_samples, cfg.seed.wrapping_add(SEED_STATS)).stage("raster-io")?;
    Ok(BandStats {
        bands: bands.iter().map(|&b| all.bands[b]).collect(),
    })
}

pub fn checkpoint_dir(cfg: &PipelineConfig, out: &Path) -> PathBuf {
    cfg.encoder.checkpoint_dir.clone().unwrap_or_else(|| suffixed(out, ".ckpt"))
}

/// open, stats, plan, encode (resumable), mosaic, write.
pub fn run_features(cfg: &PipelineConfig, input: &Path, out: &Path, flags: &FeatureFlags, report: Reporter) -> CliResult<FeaturesSummary> {
    report(Report::Stage("open"));
    let ds = prepare_source(cfg, input, out, flags.dry_run, report)?;
    // a dry run skips the pca3 reduction but plans as if it had happened
    let pca3_skipped = flags.dry_run && cfg.encoder.band_strategy == BandStrategyConfig::Pca3;
    let (encoder, bands, adaptation) = build_encoder(cfg, if pca3_skipped { 3 } else { ds.band_count })?;
    let (s, p, d) = (encoder.sample_size(), encoder.patch_size(), encoder.embed_dim());
    let plan: TilePlan = plan_tiles(ds.width, ds.height, s, cfg.encoder.stride).stage("tiler")?;
    let batches = plan.batch_count(cfg.encoder.batch_size);
    let (ow, oh, ogt) = output_grid_geometry(&ds.geotransform, ds.width, ds.height, p).stage("mosaic")?;
    report(Report::Info(format!(
        "plan: {} tiles of {s}px, stride {}, {batches} batches of {}",
        plan.len(),
        cfg.encoder.stride,
        cfg.encoder.batch_size
    )));
    report(Report::Info(format!(
        "output: {ow}x{oh}x{d}, pixel size {} x {}, origin ({}, {})",
        ogt.pixel_width, ogt.pixel_height, ogt.origin_x, ogt.origin_y
    )));
    let mut summary = FeaturesSummary {
        tiles: plan.len(),
        batches,
        out_width: ow,
        out_height: oh,
        dim: d,
        reused_batches: 0,
        computed_batches: 0,
        output: None,
    };
    if flags.dry_run {
        for (i, (c, r)) in plan.offsets.iter().enumerate() {
            report(Report::Info(format!("tile {i}: col {c} row {r}")));
        }
        return Ok(summary);
    }

    report(Report::Stage("stats"));
    let stats = selected_stats(&ds, &bands, cfg)?;
    report(Report::Stage("inference"));
    let options = InferenceOptions {
        batch_size: cfg.encoder.batch_size,
        workers: cfg.workers,
        pause_ms: cfg.encoder.pause_ms,
        checkpoint_dir: checkpoint_dir(cfg, out),
        resume: flags.resume,
        stop_after_batches: flags.stop_after_batches,
        params: RunParams {
            sample_size: s,
            stride: cfg.encoder.stride,
            bands: bands.clone(),
            adaptation,
            quantized: cfg.encoder.quantize,
        },
    };
    let outcome = run_inference(&ds, &plan, encoder.as_ref(), &bands, &stats, &options, &mut |pr| report(Report::Progress(pr)))
        .stage("encoder")?;

    report(Report::Stage("mosaic"));
    let mut acc = FeatureAccumulator::new(&ds.geotransform, ds.width, ds.height, &ds.crs_id, p, d).stage("mosaic")?;
    mosaic_inference(&outcome, &mut acc).stage("mosaic")?;
    let raster = acc.finalize().stage("mosaic")?;
    raster.write(out, cfg.output.write_options()).stage("raster-io")?;
    if !cfg.encoder.keep_checkpoint {
        outcome.cleanup().stage("encoder")?;
    }
    cfg.echo(out)?;
    summary.reused_batches = outcome.reused_batches;
    summary.computed_batches = outcome.computed_batches;
    summary.output = Some(out.to_path_buf());
    report(Report::Info(format!("wrote {}", out.display())));
    Ok(summary)
}

/// PCA or t-SNE of a feature raster.
pub fn run_reduce(cfg: &PipelineConfig, features: &Path, out: &Path, report: Reporter) -> CliResult<Vec<PathBuf>> {
    let ds = open(features)?;
    let a = &cfg.analysis;
    let files = match a.method {
        ReduceMethod::Pca => {
            report(Report::Stage("pca"));
            let sample = sample_pixels(&ds, a.sample_size, cfg.seed.wrapping_add(SEED_SAMPLE)).stage("analysis")?;
            let model = fit_pca(&sample, a.components).stage("analysis")?;
            transform_raster_pca(&ds, &model, out, cfg.output.write_options()).stage("analysis")?;
            let json = suffixed(out, ".pca.json");
            model.save(&json).stage("analysis")?;
            report(Report::Info(format!("explained variance: {:?}", model.explained_variance)));
            vec![out.to_path_buf(), json]
        }
        ReduceMethod::Tsne => {
            report(Report::Stage("tsne"));
            let sample = sample_pixels(&ds, a.tsne_samples, cfg.seed.wrapping_add(SEED_TSNE)).stage("analysis")?;
            let res: TsneResult = tsne_embed(&sample, &a.tsne).stage("analysis")?;
            let cells = ds.width * ds.height;
            let mut data = vec![f32::NAN; res.dims * cells];
            for (i, &cell) in sample.cells.iter().enumerate() {
                for (k, &v) in res.row(i).iter().enumerate() {
                    data[k * cells + cell] = v as f32;
                }
            }
            let r = Raster::new(ds.width, ds.height, res.dims, ds.geotransform, ds.crs_id.clone(), data).stage("analysis")?;
            r.write_as(out, SampleType::F32, Some(f64::NAN), cfg.output.write_options()).stage("raster-io")?;
            let json = suffixed(out, ".tsne.json");
            std::fs::write(&json, serde_json::to_vec_pretty(&res).expect("embedding serializes"))
                .map_err(|e| CliError::input(format!("analysis: {}: {e}", json.display())))?;
            report(Report::Info(format!("tsne: n={} KL {} -> {}", res.n, res.kl_initial, res.kl_final)));
            vec![out.to_path_buf(), json]
        }
    };
    cfg.echo(out)?;
    Ok(files)
}

/// k-means on a pixel sample, then every pixel classified.
pub fn run_cluster(cfg: &PipelineConfig, features: &Path, out: &Path, report: Reporter) -> CliResult<KMeansModel> {
    let ds = open(features)?;
    report(Report::Stage("kmeans"));
    let sample = sample_pixels(&ds, cfg.analysis.sample_size, cfg.seed.wrapping_add(SEED_SAMPLE)).stage("analysis")?;
    let model = fit_kmeans(&sample, &cfg.analysis.kmeans, cfg.seed.wrapping_add(SEED_KMEANS)).stage("analysis")?;
    predict_kmeans_raster(&ds, &model, out, cfg.output.write_options()).stage("analysis")?;
    model.save(suffixed(out, ".kmeans.json")).stage("analysis")?;
    report(Report::Info(format!(
        "kmeans: k={} inertia {} after {} iterations",
        model.k, model.inertia, model.iterations
    )));
    cfg.echo(out)?;
    Ok(model)
}

/// Points from a GeoJSON file, checked against the raster CRS.
pub fn load_points(path: &Path, ds: &RasterDataset) -> CliResult<Vec<Point>> {
    let pc = read_points(path).stage("raster-io")?;
    pc.check_crs(&ds.crs_id).stage("raster-io")?;
    Ok(pc.points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityOutput {
    pub raster: PathBuf,
    pub mask: Option<PathBuf>,
    pub template: TemplateSet,
}

pub fn run_similarity(cfg: &PipelineConfig, features: &Path, points: &[Point], out: &Path, report: Reporter) -> CliResult<SimilarityOutput> {
    let ds = open(features)?;
    report(Report::Stage("similarity"));
    let fr = ds.read_all().stage("raster-io")?;
    let template = extract_template(&fr, points, cfg.geoml.aggregation).stage("geoml")?;
    drop(fr);
    let opts = cfg.output.write_options();
    similarity_map_raster(&ds, &template, cfg.geoml.score, out, opts).stage("geoml")?;
    std::fs::write(suffixed(out, ".template.json"), serde_json::to_vec_pretty(&template).expect("template serializes"))
        .map_err(|e| CliError::input(format!("geoml: {e}")))?;
    let mask = match cfg.geoml.threshold {
        Some(t) => {
            let sim = open(out)?.read_all().stage("raster-io")?;
            let m = threshold_mask(&sim, t).stage("geoml")?;
            let path = suffixed(out, ".mask.tif");
            m.write_as(&path, SampleType::U8, Some(MASK_NODATA), opts).stage("raster-io")?;
            Some(path)
        }
        None => None,
    };
    cfg.echo(out)?;
    report(Report::Info(format!("wrote {}", out.display())));
    Ok(SimilarityOutput {
        raster: out.to_path_buf(),
        mask,
        template,
    })
}

fn dataset(cfg: &PipelineConfig, features: &Path, points: &[Point]) -> CliResult<geofeat::geoml::Dataset> {
    let fr = open(features)?.read_all().stage("raster-io")?;
    build_dataset(&fr, points, cfg.input.label_field()).stage("geoml")
}

pub fn run_fit(cfg: &PipelineConfig, features: &Path, points: &[Point], out: &Path, report: Reporter) -> CliResult<ClassifierModel> {
    report(Report::Stage("fit"));
    let ds = dataset(cfg, features, points)?;
    let model = fit_classifier(&ds, &cfg.geoml.algorithm, cfg.seed.wrapping_add(SEED_FOREST)).stage("geoml")?;
    model.save(out).stage("geoml")?;
    report(Report::Info(format!("fitted on {} points, {} classes", ds.len(), model.classes.len())));
    cfg.echo(out)?;
    Ok(model)
}

pub fn run_validate(cfg: &PipelineConfig, features: &Path, points: &[Point], out: Option<&Path>, report: Reporter) -> CliResult<CvReport> {
    report(Report::Stage("validate"));
    let ds = dataset(cfg, features, points)?;
    let scheme = cfg.geoml.scheme.resolve(cfg.seed);
    let cv = cross_validate(&ds, &scheme, &cfg.geoml.algorithm, cfg.seed.wrapping_add(SEED_FOREST)).stage("geoml")?;
    for f in &cv.folds {
        report(Report::Info(format!(
            "fold {}: train {} test {} accuracy {:.4} macro-F1 {:.4}",
            f.name, f.train_size, f.test_size, f.accuracy, f.macro_f1
        )));
    }
    report(Report::Info(format!(
        "accuracy {:.4} +/- {:.4}, macro-F1 {:.4} +/- {:.4}",
        cv.accuracy.mean, cv.accuracy.std, cv.macro_f1.mean, cv.macro_f1.std
    )));
    if let Some(out) = out {
        std::fs::write(out, serde_json::to_vec_pretty(&cv).expect("report serializes"))
            .map_err(|e| CliError::input(format!("geoml: {}: {e}", out.display())))?;
        cfg.echo(out)?;
    }
    Ok(cv)
}

pub fn run_predict(cfg: &PipelineConfig, features: &Path, model: &ClassifierModel, out: &Path, report: Reporter) -> CliResult<PathBuf> {
    let ds = open(features)?;
    report(Report::Stage("predict"));
    predict_class_raster(&ds, model, out, cfg.output.write_options()).stage("geoml")?;
    cfg.echo(out)?;
    report(Report::Info(format!("wrote {}", out.display())));
    Ok(out.to_path_buf())
}

pub fn load_classifier(path: &Path) -> CliResult<ClassifierModel> {
    ClassifierModel::load(path).stage("geoml")
}

pub fn feature_path(cfg: &PipelineConfig) -> CliResult<&Path> {
    require(&cfg.input.features, "features")
}

pub fn raster_path(cfg: &PipelineConfig) -> CliResult<&Path> {
    require(&cfg.input.raster, "raster")
}

pub fn points_path(cfg: &PipelineConfig) -> CliResult<&Path> {
    require(&cfg.input.points, "points")
}

pub fn model_path(cfg: &PipelineConfig) -> CliResult<&Path> {
    require(&cfg.input.model, "model")
}
