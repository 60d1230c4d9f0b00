//! Pipeline configuration. Every section and key is optional; unknown keys
//! are rejected.
//!
//! Sub-seeds derived from `seed`:
//!
//! | use                  | seed       |
//! |----------------------|------------|
//! | band statistics      | `seed`     |
//! | pixel sample         | `seed + 1` |
//! | k-means              | `seed + 2` |
//! | t-SNE sample         | `seed + 3` |
//! | random forest        | `seed + 4` |
//! | random k-fold        | `seed + 5` |
//! | pca3 pre-processing  | `seed + 6` |

use std::path::{Path, PathBuf};

use geofeat::analysis::{KMeansParams, TsneParams};
use geofeat::encoder::{BandStrategy, ViTConfig};
use geofeat::geoml::{Aggregation, AlgorithmSpec, CvScheme, ScoreMapping};
use geofeat::raster_io::{Compression, WriteOptions};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SEED_STATS: u64 = 0;
pub const SEED_SAMPLE: u64 = 1;
pub const SEED_KMEANS: u64 = 2;
pub const SEED_TSNE: u64 = 3;
pub const SEED_FOREST: u64 = 4;
pub const SEED_KFOLD: u64 = 5;
pub const SEED_PCA3: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workers: usize,
    pub input: InputConfig,
    pub encoder: EncoderConfig,
    pub mosaic: MosaicConfig,
    pub analysis: AnalysisConfig,
    pub geoml: GeomlConfig,
    pub output: OutputConfig,
    pub service: ServiceConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            input: InputConfig::default(),
            encoder: EncoderConfig::default(),
            mosaic: MosaicConfig::default(),
            analysis: AnalysisConfig::default(),
            geoml: GeomlConfig::default(),
            output: OutputConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    /// Source raster for `features`.
    pub raster: Option<PathBuf>,
    /// Feature raster for every downstream subcommand.
    pub features: Option<PathBuf>,
    /// GeoJSON points: templates for `similarity`, labels for `fit`/`validate`.
    pub points: Option<PathBuf>,
    pub label_field: Option<String>,
    /// Fitted classifier for `predict`.
    pub model: Option<PathBuf>,
}

impl InputConfig {
    pub fn label_field(&self) -> &str {
        self.label_field.as_deref().unwrap_or("label")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandStrategyConfig {
    /// `none` when band counts match, `replicate-mod3` above 3, `average-mod` below.
    Auto,
    ReplicateMod3,
    AverageMod,
    SelectBands(Vec<usize>),
    /// Reduce the raster to 3 principal components before encoding.
    Pca3,
    None,
}

impl BandStrategyConfig {
    /// Weight-level strategy for a raster with `raster_bands` bands feeding a
    /// model with `model_bands` inputs.
    pub fn resolve(&self, raster_bands: usize, model_bands: usize) -> BandStrategy {
        match self {
            BandStrategyConfig::Auto if raster_bands == model_bands => BandStrategy::None,
            BandStrategyConfig::Auto if raster_bands > model_bands => BandStrategy::ReplicateMod3,
            BandStrategyConfig::Auto => BandStrategy::AverageMod,
            BandStrategyConfig::ReplicateMod3 => BandStrategy::ReplicateMod3,
            BandStrategyConfig::AverageMod => BandStrategy::AverageMod,
            BandStrategyConfig::SelectBands(l) => BandStrategy::SelectBands(l.clone()),
            BandStrategyConfig::Pca3 | BandStrategyConfig::None => BandStrategy::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// `"reference"` or a path to a serialized model.
    pub model: String,
    pub vit: ViTConfig,
    pub stride: usize,
    pub batch_size: usize,
    pub band_strategy: BandStrategyConfig,
    pub quantize: bool,
    pub pause_ms: u64,
    pub stats_samples: usize,
    /// Defaults to `<out>.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    pub keep_checkpoint: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            model: "reference".into(),
            vit: ViTConfig {
                patch_size: 8,
                embed_dim: 16,
                depth: 2,
                heads: 2,
                mlp_ratio: 2.0,
                in_bands: 3,
                sample_size: 64,
            },
            stride: 32,
            batch_size: 16,
            band_strategy: BandStrategyConfig::Auto,
            quantize: false,
            pause_ms: 0,
            stats_samples: 100_000,
            checkpoint_dir: None,
            keep_checkpoint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MosaicConfig {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceMethod {
    #[default]
    Pca,
    Tsne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub sample_size: usize,
    pub method: ReduceMethod,
    pub components: usize,
    pub tsne_samples: usize,
    pub tsne: TsneParams,
    pub kmeans: KMeansParams,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            sample_size: 100_000,
            method: ReduceMethod::Pca,
            components: 3,
            tsne_samples: 2000,
            tsne: TsneParams::default(),
            kmeans: KMeansParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SchemeConfig {
    RandomKfold {
        #[serde(default = "default_k")]
        k: usize,
        /// Defaults to the derived k-fold seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    ColumnFold {},
    ColumnSplit {},
}

fn default_k() -> usize {
    5
}

impl SchemeConfig {
    pub fn resolve(&self, base_seed: u64) -> CvScheme {
        match self {
            SchemeConfig::RandomKfold { k, seed } => CvScheme::RandomKfold {
                k: *k,
                seed: seed.unwrap_or(base_seed.wrapping_add(SEED_KFOLD)),
            },
            SchemeConfig::ColumnFold {} => CvScheme::ColumnFold,
            SchemeConfig::ColumnSplit {} => CvScheme::ColumnSplit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeomlConfig {
    pub aggregation: Aggregation,
    pub score: ScoreMapping,
    pub threshold: Option<f64>,
    pub algorithm: AlgorithmSpec,
    pub scheme: SchemeConfig,
}

impl Default for GeomlConfig {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::Mean,
            score: ScoreMapping::Clamp,
            threshold: None,
            algorithm: AlgorithmSpec::RandomForest(Default::default()),
            scheme: SchemeConfig::RandomKfold { k: 5, seed: None },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompressionConfig {
    #[default]
    Deflate,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub compression: CompressionConfig,
    /// Write `<out>.config.json` beside every output.
    pub echo_config: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            compression: CompressionConfig::Deflate,
            echo_config: true,
        }
    }
}

impl OutputConfig {
    pub fn write_options(&self) -> WriteOptions {
        WriteOptions {
            compression: match self.compression {
                CompressionConfig::Deflate => Compression::Deflate,
                CompressionConfig::None => Compression::None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub bind: String,
    /// Directory for service outputs; defaults to the current directory.
    pub workspace: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            workspace: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::config(format!("config: {m}")));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.encoder.batch_size == 0 {
            return bad("encoder.batch_size must be at least 1".into());
        }
        if self.encoder.stride == 0 {
            return bad("encoder.stride must be at least 1".into());
        }
        if self.encoder.model == "reference" {
            self.encoder.vit.validate().map_err(|e| CliError::config(format!("config: encoder.vit: {e}")))?;
        }
        if let Some(t) = self.geoml.threshold {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("geoml.threshold {t} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// `<out>.config.json` echo of the effective configuration.
    pub fn echo(&self, out: &Path) -> CliResult<()> {
        if !self.output.echo_config {
            return Ok(());
        }
        let path = suffixed(out, ".config.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::input(format!("config echo: {e}")))?;
        std::fs::write(&path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }
}

/// `path` with `suffix` appended to its full file name.
pub fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let c = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.encoder.vit.sample_size, 64);
        assert_eq!(c.analysis.tsne.perplexity, 30.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [r#"{"bogus":1}"#, r#"{"encoder":{"strid":3}}"#, r#"{"geoml":{"scheme":{"kind":"column-fold","k":3}}}"#, r#"{"geoml":{"algorithm":{"kind":"knn","k":1,"j":2}}}"#] {
            let err = PipelineConfig::from_json(text).unwrap_err();
            assert_eq!(err.code, 2, "{text}: {err}");
        }
    }

    #[test]
    fn strategies_and_schemes_parse() {
        let c = PipelineConfig::from_json(
            r#"{"encoder":{"band_strategy":{"select-bands":[2,1,0]}},"geoml":{"scheme":{"kind":"random-kfold"},"algorithm":{"kind":"knn","k":1}}}"#,
        )
        .unwrap();
        assert_eq!(c.encoder.band_strategy, BandStrategyConfig::SelectBands(vec![2, 1, 0]));
        assert_eq!(c.geoml.scheme.resolve(10), CvScheme::RandomKfold { k: 5, seed: 15 });
        let rf = PipelineConfig::from_json(r#"{"geoml":{"algorithm":{"kind":"random-forest","n_trees":7}}}"#).unwrap();
        assert!(matches!(rf.geoml.algorithm, AlgorithmSpec::RandomForest(ref f) if f.n_trees == 7));
        assert!(PipelineConfig::from_json(r#"{"geoml":{"algorithm":{"kind":"random-forest","trees":7}}}"#).is_err());
        let p = PipelineConfig::from_json(r#"{"encoder":{"band_strategy":"pca3"}}"#).unwrap();
        assert_eq!(p.encoder.band_strategy, BandStrategyConfig::Pca3);
    }

    #[test]
    fn auto_strategy() {
        let a = BandStrategyConfig::Auto;
        assert_eq!(a.resolve(3, 3), BandStrategy::None);
        assert_eq!(a.resolve(6, 3), BandStrategy::ReplicateMod3);
        assert_eq!(a.resolve(1, 3), BandStrategy::AverageMod);
    }

    #[test]
    fn validation() {
        assert!(PipelineConfig::from_json(r#"{"workers":0}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"geoml":{"threshold":2.0}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"encoder":{"vit":{"patch_size":7,"embed_dim":16,"depth":1,"heads":2,"mlp_ratio":2.0,"in_bands":3,"sample_size":64}}}"#).is_err());
    }
}
