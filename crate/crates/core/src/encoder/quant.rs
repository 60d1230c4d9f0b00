//! Per-tensor affine uint8 weight quantization.
//!
//! `scale = (hi - lo) / 255`, `zero_point = clamp(round(-lo / scale), 0, 255)`,
//! `q = clamp(round(v / scale) + zero_point, 0, 255)` with round-half-away
//! from zero, where `[lo, hi]` is the tensor range widened to contain 0.
//! Constant tensors use `scale = 1`. Inference dequantizes and runs in f32.

use serde::{Deserialize, Serialize};

use super::weights::{ModelWeights, Tensor};
use super::ViTConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
    pub scale: f64,
    pub zero_point: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub config: ViTConfig,
    pub tensors: Vec<QuantizedTensor>,
}

pub fn quantize_tensor(name: &str, shape: &[usize], values: &[f32]) -> Result<QuantizedTensor> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("tensor {name} holds {v}")));
    }
    let min = values.iter().fold(f64::INFINITY, |m, &v| m.min(v as f64));
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let (scale, zero_point) = if values.is_empty() || max == min {
        let c = if values.is_empty() { 0.0 } else { min };
        (1.0, (-c).round().clamp(0.0, 255.0))
    } else {
        let lo = min.min(0.0);
        let hi = max.max(0.0);
        let scale = (hi - lo) / 255.0;
        (scale, (-lo / scale).round().clamp(0.0, 255.0))
    };
    let data = values
        .iter()
        .map(|&v| ((v as f64 / scale).round() + zero_point).clamp(0.0, 255.0) as u8)
        .collect();
    Ok(QuantizedTensor {
        name: name.to_string(),
        shape: shape.to_vec(),
        data,
        scale,
        zero_point: zero_point as u8,
    })
}

pub fn dequantize(t: &QuantizedTensor) -> Vec<f32> {
    let zp = t.zero_point as f64;
    t.data.iter().map(|&q| ((q as f64 - zp) * t.scale) as f32).collect()
}

pub fn quantize_weights(w: &ModelWeights) -> Result<QuantizedModel> {
    let tensors = w
        .tensors
        .iter()
        .map(|t| quantize_tensor(&t.name, &t.shape, &t.data))
        .collect::<Result<_>>()?;
    Ok(QuantizedModel {
        config: w.config.clone(),
        tensors,
    })
}

impl QuantizedModel {
    /// Float weights used for inference.
    pub fn dequantize(&self) -> ModelWeights {
        ModelWeights {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|q| Tensor {
                    name: q.name.clone(),
                    shape: q.shape.clone(),
                    data: dequantize(q),
                })
                .collect(),
        }
    }

    pub fn byte_size(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len() + 9).sum()
    }
}
