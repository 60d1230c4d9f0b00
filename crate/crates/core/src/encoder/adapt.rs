use serde::{Deserialize, Serialize};

use super::ModelWeights;
use crate::error::{Error, Result};

/// How a 3-band model is fed a raster with a different band count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandStrategy {
    /// Input channel `c` reuses pretrained channel `c mod 3`. No rescaling.
    ReplicateMod3,
    /// Input channel `c` is the mean of pretrained channels `j` with `j mod target == c`.
    AverageMod,
    /// Feed three chosen raster bands (0-based) to the unmodified model.
    SelectBands(Vec<usize>),
    /// Raster band count must already match the model.
    None,
}

impl BandStrategy {
    /// Raster bands read for each tile, in model channel order.
    pub fn raster_bands(&self, raster_band_count: usize) -> Vec<usize> {
        match self {
            BandStrategy::SelectBands(list) => list.clone(),
            _ => (0..raster_band_count).collect(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            BandStrategy::ReplicateMod3 => "replicate-mod3".into(),
            BandStrategy::AverageMod => "average-mod".into(),
            BandStrategy::SelectBands(l) => format!("select-bands{l:?}"),
            BandStrategy::None => "none".into(),
        }
    }
}

/// Rewrite the patch-embedding projection for `target_bands` input bands.
/// Only `patch_embed.weight` changes; its bias is left alone.
pub fn adapt_input_layer(weights: &ModelWeights, target_bands: usize, strategy: &BandStrategy) -> Result<ModelWeights> {
    let src_bands = weights.config.in_bands;
    let mismatch = |why: String| Err(Error::invalid(format!("band strategy {}: {why}", strategy.label())));
    match strategy {
        BandStrategy::None => {
            if target_bands != src_bands {
                return mismatch(format!("model takes {src_bands} bands, raster has {target_bands}"));
            }
            Ok(weights.clone())
        }
        BandStrategy::SelectBands(list) => {
            if list.len() != src_bands {
                return mismatch(format!("needs {src_bands} band indices, got {}", list.len()));
            }
            if let Some(b) = list.iter().find(|&&b| b >= target_bands) {
                return mismatch(format!("band {b} not in a {target_bands}-band raster"));
            }
            Ok(weights.clone())
        }
        BandStrategy::ReplicateMod3 | BandStrategy::AverageMod => {
            if src_bands != 3 {
                return mismatch(format!("requires a 3-band model, got {src_bands}"));
            }
            let replicate = matches!(strategy, BandStrategy::ReplicateMod3);
            if target_bands == 0 || (replicate && target_bands < 3) || (!replicate && target_bands >= 3) {
                return mismatch(format!("not applicable to {target_bands} bands"));
            }
            let d = weights.config.embed_dim;
            let pp = weights.config.patch_size * weights.config.patch_size;
            let old = &weights.get("patch_embed.weight")?.data;
            let mut new = vec![0f32; d * target_bands * pp];
            for o in 0..d {
                for c in 0..target_bands {
                    let dst = &mut new[(o * target_bands + c) * pp..(o * target_bands + c + 1) * pp];
                    if replicate {
                        let src = c % 3;
                        dst.copy_from_slice(&old[(o * 3 + src) * pp..(o * 3 + src + 1) * pp]);
                    } else {
                        let group: Vec<usize> = (0..3).filter(|j| j % target_bands == c).collect();
                        for k in 0..pp {
                            let s: f32 = group.iter().map(|&j| old[(o * 3 + j) * pp + k]).sum();
                            dst[k] = s / group.len() as f32;
                        }
                    }
                }
            }
            let mut out = weights.clone();
            out.config.in_bands = target_bands;
            let t = out.get_mut("patch_embed.weight")?;
            t.shape[1] = target_bands;
            t.data = new;
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{build_reference_vit, ViTConfig};

    fn model() -> ModelWeights {
        build_reference_vit(&ViTConfig {
            patch_size: 2,
            embed_dim: 4,
            depth: 1,
            heads: 2,
            mlp_ratio: 1.0,
            in_bands: 3,
            sample_size: 4,
        })
        .unwrap()
    }

    fn channel(w: &ModelWeights, o: usize, c: usize) -> Vec<f32> {
        let t = w.get("patch_embed.weight").unwrap();
        let (bands, pp) = (t.shape[1], t.shape[2] * t.shape[3]);
        t.data[(o * bands + c) * pp..(o * bands + c + 1) * pp].to_vec()
    }

    #[test]
    fn replicate_to_three_is_identity() {
        let w = model();
        assert_eq!(adapt_input_layer(&w, 3, &BandStrategy::ReplicateMod3).unwrap(), w);
    }

    #[test]
    fn replicate_to_six_repeats_channels() {
        let w = model();
        let a = adapt_input_layer(&w, 6, &BandStrategy::ReplicateMod3).unwrap();
        assert_eq!(a.config.in_bands, 6);
        assert_eq!(a.get("patch_embed.weight").unwrap().shape, vec![4, 6, 2, 2]);
        for o in 0..4 {
            for c in 0..6 {
                assert_eq!(channel(&a, o, c), channel(&w, o, c % 3));
            }
        }
        assert_eq!(a.get("patch_embed.bias").unwrap(), w.get("patch_embed.bias").unwrap());
        a.validate().unwrap();
    }

    #[test]
    fn average_to_one_is_channel_mean() {
        let w = model();
        let a = adapt_input_layer(&w, 1, &BandStrategy::AverageMod).unwrap();
        for o in 0..4 {
            let (w0, w1, w2) = (channel(&w, o, 0), channel(&w, o, 1), channel(&w, o, 2));
            let expect: Vec<f32> = (0..4).map(|k| (w0[k] + w1[k] + w2[k]) / 3.0).collect();
            assert_eq!(channel(&a, o, 0), expect);
        }
    }

    #[test]
    fn average_to_two_groups_by_modulo() {
        let w = model();
        let a = adapt_input_layer(&w, 2, &BandStrategy::AverageMod).unwrap();
        let (w0, w1, w2) = (channel(&w, 1, 0), channel(&w, 1, 1), channel(&w, 1, 2));
        let c0: Vec<f32> = (0..4).map(|k| (w0[k] + w2[k]) / 2.0).collect();
        assert_eq!(channel(&a, 1, 0), c0);
        assert_eq!(channel(&a, 1, 1), w1);
    }

    #[test]
    fn select_bands_leaves_weights() {
        let w = model();
        let s = BandStrategy::SelectBands(vec![4, 2, 0]);
        assert_eq!(adapt_input_layer(&w, 6, &s).unwrap(), w);
        assert_eq!(s.raster_bands(6), vec![4, 2, 0]);
        assert!(adapt_input_layer(&w, 4, &s).is_err());
        assert!(adapt_input_layer(&w, 6, &BandStrategy::SelectBands(vec![0, 1])).is_err());
    }

    #[test]
    fn strategy_band_count_mismatches() {
        let w = model();
        assert!(adapt_input_layer(&w, 2, &BandStrategy::ReplicateMod3).is_err());
        assert!(adapt_input_layer(&w, 4, &BandStrategy::AverageMod).is_err());
        assert!(adapt_input_layer(&w, 4, &BandStrategy::None).is_err());
        let six = adapt_input_layer(&w, 6, &BandStrategy::ReplicateMod3).unwrap();
        assert!(adapt_input_layer(&six, 7, &BandStrategy::ReplicateMod3).is_err());
    }
}
