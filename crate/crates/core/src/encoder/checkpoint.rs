//! On-disk state of a resumable inference run.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/batch_<id>.bin   u32 LE header length | JSON header | f32 LE grids in tile order
//! ```
//!
//! A batch file is fully written and renamed into place before its id is
//! added to the manifest, so every recorded id always has its file.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PatchFeatureGrid;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunParams {
    pub sample_size: usize,
    pub stride: usize,
    pub bands: Vec<usize>,
    pub adaptation: String,
    pub quantized: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model_fingerprint: String,
    pub plan_fingerprint: String,
    pub params: RunParams,
    pub batch_size: usize,
    pub n_tiles: usize,
    pub completed: BTreeSet<usize>,
}

impl CheckpointManifest {
    pub fn n_batches(&self) -> usize {
        self.n_tiles.div_ceil(self.batch_size.max(1))
    }

    pub fn is_complete(&self) -> bool {
        self.completed.len() == self.n_batches()
    }

    /// First field that prevents resuming `self` (on disk) with `run`.
    pub fn check_compatible(&self, run: &CheckpointManifest) -> Result<()> {
        let mismatch = |field: &str, expected: String, actual: String| {
            Err(Error::CheckpointMismatch {
                field: field.to_string(),
                expected,
                actual,
            })
        };
        if self.model_fingerprint != run.model_fingerprint {
            return mismatch("model fingerprint", self.model_fingerprint.clone(), run.model_fingerprint.clone());
        }
        if self.plan_fingerprint != run.plan_fingerprint {
            return mismatch("plan fingerprint", self.plan_fingerprint.clone(), run.plan_fingerprint.clone());
        }
        let (a, b) = (&self.params, &run.params);
        if a.bands != b.bands {
            return mismatch("bands", format!("{:?}", a.bands), format!("{:?}", b.bands));
        }
        if a.adaptation != b.adaptation {
            return mismatch("adaptation", a.adaptation.clone(), b.adaptation.clone());
        }
        if a.quantized != b.quantized {
            return mismatch("quantized", a.quantized.to_string(), b.quantized.to_string());
        }
        if self.batch_size != run.batch_size {
            return mismatch("batch_size", self.batch_size.to_string(), run.batch_size.to_string());
        }
        if self.n_tiles != run.n_tiles {
            return mismatch("n_tiles", self.n_tiles.to_string(), run.n_tiles.to_string());
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(self)?)
    }
}

pub fn batch_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("batch_{id}.bin"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchHeader {
    pub batch_id: usize,
    pub grid: usize,
    pub dim: usize,
    pub tiles: Vec<(usize, usize)>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(parent) = path.parent() {
        // directory fsync is best effort; not every platform allows opening a dir
        if let Ok(d) = File::open(parent) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

pub fn write_batch(dir: &Path, id: usize, grids: &[PatchFeatureGrid]) -> Result<PathBuf> {
    let (grid, dim) = grids.first().map(|g| (g.grid, g.dim)).unwrap_or((0, 0));
    let header = serde_json::to_vec(&BatchHeader {
        batch_id: id,
        grid,
        dim,
        tiles: grids.iter().map(|g| (g.col_off, g.row_off)).collect(),
    })?;
    let body_len: usize = grids.iter().map(|g| g.data.len() * 4).sum();
    let mut bytes = Vec::with_capacity(4 + header.len() + body_len);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header);
    for g in grids {
        if g.grid != grid || g.dim != dim {
            return Err(Error::ShapeMismatch("grids within a batch must share dimensions".into()));
        }
        for v in &g.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let path = batch_path(dir, id);
    write_atomic(&path, &bytes)?;
    Ok(path)
}

pub fn read_batch(path: &Path) -> Result<(BatchHeader, Vec<PatchFeatureGrid>)> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| Error::ShapeMismatch(format!("{}: {m}", path.display()));
    if bytes.len() < 4 {
        return Err(bad("truncated batch header"));
    }
    let hlen = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let header: BatchHeader = serde_json::from_slice(bytes.get(4..4 + hlen).ok_or_else(|| bad("truncated batch header"))?)?;
    let per_tile = header.grid * header.grid * header.dim;
    let body = &bytes[4 + hlen..];
    if body.len() != per_tile * header.tiles.len() * 4 {
        return Err(bad("batch body length does not match header"));
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let grids = header
        .tiles
        .iter()
        .enumerate()
        .map(|(i, &(c, r))| PatchFeatureGrid {
            col_off: c,
            row_off: r,
            grid: header.grid,
            dim: header.dim,
            data: values[i * per_tile..(i + 1) * per_tile].to_vec(),
        })
        .collect();
    Ok((header, grids))
}

/// Remove the manifest and every batch file; the directory itself is removed
/// when it ends up empty.
pub fn clear(dir: &Path) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let ours = name == MANIFEST_FILE
            || name.ends_with(".tmp")
            || (name.starts_with("batch_") && name.ends_with(".bin"));
        if ours {
            fs::remove_file(&path)?;
        }
    }
    if fs::read_dir(dir)?.next().is_none() {
        fs::remove_dir(dir)?;
    }
    Ok(())
}
