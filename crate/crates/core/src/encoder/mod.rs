//! Patch-feature encoders and the resumable tile inference loop.

mod adapt;
pub mod checkpoint;
mod external;
mod inference;
mod quant;
mod vit;
mod weights;

use serde::{Deserialize, Serialize};

pub use adapt::{adapt_input_layer, BandStrategy};
pub use checkpoint::{CheckpointManifest, RunParams};
pub use external::load_external_model;
pub use inference::{plan_fingerprint, run_inference, InferenceOptions, InferenceOutcome, Progress};
pub use quant::{dequantize, quantize_tensor, quantize_weights, QuantizedModel, QuantizedTensor};
pub use vit::{encode_tile, patch_embed_prebias};
pub use weights::{build_reference_vit, ModelWeights, Tensor};

use crate::error::{Error, Result};
use crate::raster_io::PixelBlock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViTConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub in_bands: usize,
    pub sample_size: usize,
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("vit config: {m}")));
        if self.patch_size == 0 || self.sample_size == 0 || self.sample_size % self.patch_size != 0 {
            return bad("sample_size must be a positive multiple of patch_size");
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return bad("embed_dim must be a positive multiple of heads");
        }
        if self.depth == 0 || self.in_bands == 0 {
            return bad("depth and in_bands must be at least 1");
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) || self.hidden_dim() == 0 {
            return bad("mlp_ratio must be positive");
        }
        Ok(())
    }

    /// Patches per tile side.
    pub fn grid(&self) -> usize {
        self.sample_size / self.patch_size
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn hidden_dim(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }
}

/// Patch tokens of one tile, token-major: `data[(gy * grid + gx) * dim + f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureGrid {
    pub col_off: usize,
    pub row_off: usize,
    pub grid: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl PatchFeatureGrid {
    pub fn token(&self, gx: usize, gy: usize) -> &[f32] {
        let i = gy * self.grid + gx;
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Anything that turns a normalized `S x S` tile into a patch grid.
pub trait TileEncoder: Send + Sync {
    fn patch_size(&self) -> usize;
    fn embed_dim(&self) -> usize;
    fn in_bands(&self) -> usize;
    fn sample_size(&self) -> usize;
    fn encode(&self, tile: &PixelBlock) -> Result<PatchFeatureGrid>;
    /// Stable identity of the model and its weights, used to guard resumes.
    fn fingerprint(&self) -> String;

    fn grid(&self) -> usize {
        self.sample_size() / self.patch_size()
    }
}

/// The built-in ViT, with precomputed fingerprint.
#[derive(Debug, Clone)]
pub struct ReferenceVit {
    weights: ModelWeights,
    fingerprint: String,
}

impl ReferenceVit {
    pub fn new(weights: ModelWeights) -> Result<Self> {
        weights.validate()?;
        let fingerprint = weights.fingerprint();
        Ok(Self { weights, fingerprint })
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }
}

impl TileEncoder for ReferenceVit {
    fn patch_size(&self) -> usize {
        self.weights.config.patch_size
    }
    fn embed_dim(&self) -> usize {
        self.weights.config.embed_dim
    }
    fn in_bands(&self) -> usize {
        self.weights.config.in_bands
    }
    fn sample_size(&self) -> usize {
        self.weights.config.sample_size
    }
    fn encode(&self, tile: &PixelBlock) -> Result<PatchFeatureGrid> {
        encode_tile(&self.weights, tile)
    }
    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}
