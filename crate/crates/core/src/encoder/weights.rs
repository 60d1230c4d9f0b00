use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ViTConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named tensors of the reference ViT in declaration order.
///
/// The order is part of the contract: it defines the global element index
/// used by the analytic initialization.
///
/// ```text
/// patch_embed.weight   [D, bands, p, p]
/// patch_embed.bias     [D]
/// pos_embed            [(S/p)^2, D]
/// blocks.{i}.norm1.weight / .bias     [D]
/// blocks.{i}.attn.{q,k,v}.weight      [D, D]   (each followed by its [D] bias)
/// blocks.{i}.attn.proj.weight / .bias [D, D] / [D]
/// blocks.{i}.norm2.weight / .bias     [D]
/// blocks.{i}.mlp.fc1.weight / .bias   [H, D] / [H]
/// blocks.{i}.mlp.fc2.weight / .bias   [D, H] / [D]
/// norm.weight / norm.bias             [D]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ViTConfig,
    pub tensors: Vec<Tensor>,
}

pub(crate) fn declared_shapes(cfg: &ViTConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.embed_dim;
    let p = cfg.patch_size;
    let h = cfg.hidden_dim();
    let mut shapes = vec![
        ("patch_embed.weight".to_string(), vec![d, cfg.in_bands, p, p]),
        ("patch_embed.bias".to_string(), vec![d]),
        ("pos_embed".to_string(), vec![cfg.tokens(), d]),
    ];
    for i in 0..cfg.depth {
        let pre = format!("blocks.{i}");
        shapes.push((format!("{pre}.norm1.weight"), vec![d]));
        shapes.push((format!("{pre}.norm1.bias"), vec![d]));
        for proj in ["q", "k", "v", "proj"] {
            shapes.push((format!("{pre}.attn.{proj}.weight"), vec![d, d]));
            shapes.push((format!("{pre}.attn.{proj}.bias"), vec![d]));
        }
        shapes.push((format!("{pre}.norm2.weight"), vec![d]));
        shapes.push((format!("{pre}.norm2.bias"), vec![d]));
        shapes.push((format!("{pre}.mlp.fc1.weight"), vec![h, d]));
        shapes.push((format!("{pre}.mlp.fc1.bias"), vec![h]));
        shapes.push((format!("{pre}.mlp.fc2.weight"), vec![d, h]));
        shapes.push((format!("{pre}.mlp.fc2.bias"), vec![d]));
    }
    shapes.push(("norm.weight".to_string(), vec![d]));
    shapes.push(("norm.bias".to_string(), vec![d]));
    shapes
}

/// Deterministic reference weights: element `j` of the flattened parameter
/// sequence is `0.02 * sin(j + 1)`.
pub fn build_reference_vit(cfg: &ViTConfig) -> Result<ModelWeights> {
    cfg.validate()?;
    let mut j: u64 = 0;
    let tensors = declared_shapes(cfg)
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    j += 1;
                    (0.02 * (j as f64).sin()) as f32
                })
                .collect();
            Tensor { name, shape, data }
        })
        .collect();
    Ok(ModelWeights {
        config: cfg.clone(),
        tensors,
    })
}

const MAGIC: &[u8; 8] = b"GFVIT\x01\0\0";

#[derive(Serialize, Deserialize)]
struct FileHeader {
    config: ViTConfig,
    tensors: Vec<Tensor>,
}

impl ModelWeights {
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .iter_mut()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor {name}")))
    }

    /// Check names, order and shapes against the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = declared_shapes(&self.config);
        if expected.len() != self.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&self.tensors) {
            if &t.name != name || &t.shape != shape || t.data.len() != t.numel() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {} {:?} does not match declared {} {:?}",
                    t.name, t.shape, name, shape
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 over the config and every tensor's bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).unwrap_or_default());
        for t in &self.tensors {
            h.update(t.name.as_bytes());
            for &d in &t.shape {
                h.update((d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Self-describing little-endian dump: magic, u32 header length, JSON
    /// header (config and tensor shapes), then raw f32 data in order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = serde_json::to_vec(&FileHeader {
            config: self.config.clone(),
            tensors: self.tensors.clone(),
        })?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        for t in &self.tensors {
            for v in &t.data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn is_serialized_model(path: impl AsRef<Path>) -> bool {
        let mut buf = [0u8; 8];
        std::fs::File::open(path)
            .and_then(|mut f| f.read_exact(&mut buf))
            .map(|_| &buf == MAGIC)
            .unwrap_or(false)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::NotFound(path.to_path_buf())
            } else {
                Error::Io(e)
            }
        })?;
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::NoAdapter(path.display().to_string()));
        }
        let hlen = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
        let body_start = 12 + hlen;
        if bytes.len() < body_start {
            return Err(Error::ShapeMismatch("truncated model header".into()));
        }
        let header: FileHeader = serde_json::from_slice(&bytes[12..body_start])?;
        let mut pos = body_start;
        let mut tensors = header.tensors;
        for t in &mut tensors {
            let n = t.numel();
            let end = pos + n * 4;
            if end > bytes.len() {
                return Err(Error::ShapeMismatch(format!("truncated data for tensor {}", t.name)));
            }
            t.data = bytes[pos..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            pos = end;
        }
        if pos != bytes.len() {
            return Err(Error::ShapeMismatch("trailing bytes after model data".into()));
        }
        let w = ModelWeights {
            config: header.config,
            tensors,
        };
        w.validate()?;
        Ok(w)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn sha256_hex(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ViTConfig {
        ViTConfig {
            patch_size: 8,
            embed_dim: 16,
            depth: 2,
            heads: 2,
            mlp_ratio: 2.0,
            in_bands: 3,
            sample_size: 64,
        }
    }

    #[test]
    fn first_element_follows_formula() {
        let w = build_reference_vit(&small()).unwrap();
        assert_eq!(w.tensors[0].data[0], (0.02 * 1f64.sin()) as f32);
        // second tensor continues the global index
        let n0 = w.tensors[0].numel();
        assert_eq!(w.tensors[1].data[0], (0.02 * ((n0 + 1) as f64).sin()) as f32);
    }

    #[test]
    fn deterministic() {
        assert_eq!(build_reference_vit(&small()).unwrap(), build_reference_vit(&small()).unwrap());
    }

    #[test]
    fn parameter_count_matches_shape_accounting() {
        // frozen from an independent shape-accounting script
        assert_eq!(build_reference_vit(&small()).unwrap().parameter_count(), 8592);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = small();
        cfg.heads = 3;
        assert!(build_reference_vit(&cfg).is_err());
        let mut cfg = small();
        cfg.sample_size = 60;
        assert!(build_reference_vit(&cfg).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = build_reference_vit(&small()).unwrap();
        let p = dir.path().join("m.gfvit");
        w.save(&p).unwrap();
        assert!(ModelWeights::is_serialized_model(&p));
        let back = ModelWeights::load(&p).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.fingerprint(), w.fingerprint());
    }
}
