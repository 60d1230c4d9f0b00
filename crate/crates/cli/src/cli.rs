use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, FeatureFlags, Report};
use crate::service;

#[derive(Debug, Parser)]
#[command(name = "geofeat", version, about = "Foundation-model feature extraction and analysis for geospatial rasters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Threads for encoding and prediction.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Sleep between inference batches, in milliseconds.
    #[arg(long, global = true)]
    pub pause_ms: Option<u64>,
    /// Continue from a compatible checkpoint.
    #[arg(long, global = true)]
    pub resume: bool,
    /// Print the tile plan and output geometry only.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Run the encoder with 8-bit quantized weights.
    #[arg(long, global = true)]
    pub quantize: bool,
    #[arg(long, global = true, hide = true)]
    pub stop_after_batches: Option<usize>,
    /// Log at debug level.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a raster into a patch-feature raster.
    Features { input: Option<PathBuf> },
    /// PCA or t-SNE of a feature raster.
    Reduce { input: Option<PathBuf> },
    /// k-means clustering of a feature raster.
    Cluster { input: Option<PathBuf> },
    /// Cosine-similarity map against template points.
    Similarity {
        input: Option<PathBuf>,
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Fit a classifier on labeled points.
    Fit {
        input: Option<PathBuf>,
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Classify every cell with a fitted model.
    Predict {
        input: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Cross-validate a classifier on labeled points.
    Validate {
        input: Option<PathBuf>,
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        workspace: Option<PathBuf>,
        /// Source raster to preload.
        #[arg(long)]
        raster: Option<PathBuf>,
        /// Feature raster to preload.
        #[arg(long)]
        features: Option<PathBuf>,
    },
}

fn effective_config(common: &Common) -> CliResult<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(p) = common.pause_ms {
        cfg.encoder.pause_ms = p;
    }
    if common.quantize {
        cfg.encoder.quantize = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(common: &Common) -> CliResult<&Path> {
    common.out.as_deref().ok_or_else(|| CliError::config("cli: --out is required"))
}

fn print_report(r: Report) {
    match r {
        Report::Stage(s) => log::debug!("stage {s}"),
        Report::Progress(p) => println!("batches {}/{}", p.completed_batches, p.total_batches),
        Report::Info(m) => println!("{m}"),
    }
}

fn set_or_keep(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let common = &cli.common;
    let mut cfg = effective_config(common)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .unwrap_or_else(|e| log::debug!("worker pool already set: {e}"));
    let report = &mut print_report;
    match cli.command {
        Command::Features { input } => {
            set_or_keep(&mut cfg.input.raster, input);
            let flags = FeatureFlags {
                resume: common.resume,
                dry_run: common.dry_run,
                stop_after_batches: common.stop_after_batches,
            };
            let out = out_path(common)?;
            pipeline::run_features(&cfg, pipeline::raster_path(&cfg)?, out, &flags, report)?;
        }
        Command::Reduce { input } => {
            set_or_keep(&mut cfg.input.features, input);
            pipeline::run_reduce(&cfg, pipeline::feature_path(&cfg)?, out_path(common)?, report)?;
        }
        Command::Cluster { input } => {
            set_or_keep(&mut cfg.input.features, input);
            pipeline::run_cluster(&cfg, pipeline::feature_path(&cfg)?, out_path(common)?, report)?;
        }
        Command::Similarity { input, points, threshold } => {
            set_or_keep(&mut cfg.input.features, input);
            set_or_keep(&mut cfg.input.points, points);
            if threshold.is_some() {
                cfg.geoml.threshold = threshold;
                cfg.validate()?;
            }
            let features = pipeline::feature_path(&cfg)?;
            let ds = geofeat::raster_io::open_raster(features).map_err(|e| CliError::from_core("raster-io", e))?;
            let pts = pipeline::load_points(pipeline::points_path(&cfg)?, &ds)?;
            pipeline::run_similarity(&cfg, features, &pts, out_path(common)?, report)?;
        }
        Command::Fit { input, points } => {
            set_or_keep(&mut cfg.input.features, input);
            set_or_keep(&mut cfg.input.points, points);
            let features = pipeline::feature_path(&cfg)?;
            let ds = geofeat::raster_io::open_raster(features).map_err(|e| CliError::from_core("raster-io", e))?;
            let pts = pipeline::load_points(pipeline::points_path(&cfg)?, &ds)?;
            pipeline::run_fit(&cfg, features, &pts, out_path(common)?, report)?;
        }
        Command::Predict { input, model } => {
            set_or_keep(&mut cfg.input.features, input);
            set_or_keep(&mut cfg.input.model, model);
            let model = pipeline::load_classifier(pipeline::model_path(&cfg)?)?;
            pipeline::run_predict(&cfg, pipeline::feature_path(&cfg)?, &model, out_path(common)?, report)?;
        }
        Command::Validate { input, points } => {
            set_or_keep(&mut cfg.input.features, input);
            set_or_keep(&mut cfg.input.points, points);
            let features = pipeline::feature_path(&cfg)?;
            let ds = geofeat::raster_io::open_raster(features).map_err(|e| CliError::from_core("raster-io", e))?;
            let pts = pipeline::load_points(pipeline::points_path(&cfg)?, &ds)?;
            let cv = pipeline::run_validate(&cfg, features, &pts, common.out.as_deref(), report)?;
            if common.out.is_none() {
                println!("{}", serde_json::to_string_pretty(&cv).expect("report serializes"));
            }
        }
        Command::Serve { bind, workspace, raster, features } => {
            if let Some(b) = bind {
                cfg.service.bind = b;
            }
            if workspace.is_some() {
                cfg.service.workspace = workspace;
            }
            set_or_keep(&mut cfg.input.raster, raster);
            set_or_keep(&mut cfg.input.features, features);
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::input(format!("service: runtime: {e}")))?;
            rt.block_on(service::serve(cfg))?;
        }
    }
    Ok(())
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { crate::error::EXIT_CONFIG } else { 0 };
        }
    };
    let level = if cli.common.verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
