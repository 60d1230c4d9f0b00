use std::path::Path;

use super::{ModelWeights, PatchFeatureGrid, ReferenceVit, TileEncoder};
use crate::error::{Error, Result};
use crate::raster_io::PixelBlock;

/// Wraps an adapter and verifies every output against the dimensions it
/// advertised, so a misbehaving model fails at its first tile.
struct ContractChecked<E> {
    inner: E,
}

impl<E: TileEncoder> TileEncoder for ContractChecked<E> {
    fn patch_size(&self) -> usize {
        self.inner.patch_size()
    }
    fn embed_dim(&self) -> usize {
        self.inner.embed_dim()
    }
    fn in_bands(&self) -> usize {
        self.inner.in_bands()
    }
    fn sample_size(&self) -> usize {
        self.inner.sample_size()
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
    fn encode(&self, tile: &PixelBlock) -> Result<PatchFeatureGrid> {
        let out = self.inner.encode(tile)?;
        let g = self.grid();
        if out.grid != g || out.dim != self.embed_dim() || out.data.len() != g * g * self.embed_dim() {
            return Err(Error::ShapeMismatch(format!(
                "adapter produced a {0}x{0}x{1} grid with {2} values, advertised {3}x{3}x{4}",
                out.grid,
                out.dim,
                out.data.len(),
                g,
                self.embed_dim()
            )));
        }
        Ok(out)
    }
}

/// Load a model from a local file through whichever compiled-in adapter
/// recognizes it. The only adapter shipped reads the crate's own serialized
/// reference ViT (`ModelWeights::save`).
pub fn load_external_model(path: impl AsRef<Path>) -> Result<Box<dyn TileEncoder>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    if ModelWeights::is_serialized_model(path) {
        let weights = ModelWeights::load(path)?;
        return Ok(Box::new(ContractChecked {
            inner: ReferenceVit::new(weights)?,
        }));
    }
    Err(Error::NoAdapter(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{build_reference_vit, ViTConfig};

    struct Liar;

    impl TileEncoder for Liar {
        fn patch_size(&self) -> usize {
            2
        }
        fn embed_dim(&self) -> usize {
            8
        }
        fn in_bands(&self) -> usize {
            1
        }
        fn sample_size(&self) -> usize {
            4
        }
        fn fingerprint(&self) -> String {
            "liar".into()
        }
        fn encode(&self, tile: &PixelBlock) -> Result<PatchFeatureGrid> {
            Ok(PatchFeatureGrid {
                col_off: tile.col_off,
                row_off: tile.row_off,
                grid: 2,
                dim: 4,
                data: vec![0.0; 16],
            })
        }
    }

    #[test]
    fn unknown_format_has_no_adapter() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.onnx");
        std::fs::write(&p, b"not a model").unwrap();
        let err = load_external_model(&p).err().unwrap();
        assert!(err.to_string().contains("no adapter available"), "{err}");
    }

    #[test]
    fn serialized_reference_matches_in_memory() {
        let cfg = ViTConfig {
            patch_size: 4,
            embed_dim: 8,
            depth: 1,
            heads: 2,
            mlp_ratio: 2.0,
            in_bands: 2,
            sample_size: 8,
        };
        let w = build_reference_vit(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ref.gfvit");
        w.save(&p).unwrap();
        let ext = load_external_model(&p).unwrap();
        let tile = PixelBlock::new(0, 0, 8, 8, 2, (0..128).map(|i| (i as f32 * 0.1).cos()).collect()).unwrap();
        let reference = ReferenceVit::new(w).unwrap();
        assert_eq!(ext.encode(&tile).unwrap(), reference.encode(&tile).unwrap());
        assert_eq!(ext.fingerprint(), reference.fingerprint());
    }

    #[test]
    fn contract_violation_reported() {
        let e = ContractChecked { inner: Liar };
        let tile = PixelBlock::new(0, 0, 4, 4, 1, vec![0.0; 16]).unwrap();
        assert!(matches!(e.encode(&tile), Err(Error::ShapeMismatch(_))));
    }
}
