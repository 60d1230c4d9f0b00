//! Pre-norm ViT forward pass over one tile, without a class token.

use super::{ModelWeights, PatchFeatureGrid, ViTConfig};
use crate::error::{Error, Result};
use crate::raster_io::PixelBlock;

const LN_EPS: f32 = 1e-6;

fn check_tile(cfg: &ViTConfig, tile: &PixelBlock) -> Result<()> {
    if tile.width != cfg.sample_size || tile.height != cfg.sample_size || tile.band_count != cfg.in_bands {
        return Err(Error::ShapeMismatch(format!(
            "tile is {}x{}x{}, encoder expects {}x{}x{}",
            tile.width, tile.height, tile.band_count, cfg.sample_size, cfg.sample_size, cfg.in_bands
        )));
    }
    Ok(())
}

/// Patch-embedding projection without the bias: `[tokens, D]`.
pub fn patch_embed_prebias(weights: &ModelWeights, tile: &PixelBlock) -> Result<Vec<f32>> {
    let cfg = &weights.config;
    check_tile(cfg, tile)?;
    let (p, d, bands, s) = (cfg.patch_size, cfg.embed_dim, cfg.in_bands, cfg.sample_size);
    let g = cfg.grid();
    let w = &weights.get("patch_embed.weight")?.data;
    let mut out = vec![0f32; g * g * d];
    let mut patch = vec![0f32; bands * p * p];
    for gy in 0..g {
        for gx in 0..g {
            for c in 0..bands {
                let plane = tile.band(c);
                for ky in 0..p {
                    let src = (gy * p + ky) * s + gx * p;
                    patch[(c * p + ky) * p..(c * p + ky + 1) * p].copy_from_slice(&plane[src..src + p]);
                }
            }
            let tok = &mut out[(gy * g + gx) * d..(gy * g + gx + 1) * d];
            for (o, slot) in tok.iter_mut().enumerate() {
                let row = &w[o * bands * p * p..(o + 1) * bands * p * p];
                *slot = dot_f64(row, &patch);
            }
        }
    }
    Ok(out)
}

/// Patch projections sum up to `bands * p * p` terms that often cancel, so
/// they accumulate in f64 and round once.
fn dot_f64(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum::<f64>() as f32
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x [n, in] -> [n, out]` with `w [out, in]`.
fn linear(x: &[f32], n: usize, w: &[f32], b: &[f32], out_dim: usize) -> Vec<f32> {
    let in_dim = x.len() / n;
    let mut y = vec![0f32; n * out_dim];
    for i in 0..n {
        let xi = &x[i * in_dim..(i + 1) * in_dim];
        for o in 0..out_dim {
            y[i * out_dim + o] = dot(&w[o * in_dim..(o + 1) * in_dim], xi) + b[o];
        }
    }
    y
}

fn layer_norm(x: &[f32], d: usize, gamma: &[f32], beta: &[f32]) -> Vec<f32> {
    let mut y = vec![0f32; x.len()];
    for (row, out) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for i in 0..d {
            out[i] = (row[i] - mean) * inv * gamma[i] + beta[i];
        }
    }
    y
}

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x / std::f32::consts::SQRT_2))
}

fn attention(h: &[f32], n: usize, weights: &ModelWeights, pre: &str) -> Result<Vec<f32>> {
    let cfg = &weights.config;
    let d = cfg.embed_dim;
    let heads = cfg.heads;
    let hd = d / heads;
    let t = |name: &str| weights.get(&format!("{pre}.attn.{name}")).map(|t| &t.data);
    let q = linear(h, n, t("q.weight")?, t("q.bias")?, d);
    let k = linear(h, n, t("k.weight")?, t("k.bias")?, d);
    let v = linear(h, n, t("v.weight")?, t("v.bias")?, d);
    let scale = 1.0 / (hd as f32).sqrt();
    let mut ctx = vec![0f32; n * d];
    let mut scores = vec![0f32; n];
    for head in 0..heads {
        let off = head * hd;
        for i in 0..n {
            let qi = &q[i * d + off..i * d + off + hd];
            let mut max = f32::NEG_INFINITY;
            for j in 0..n {
                let s = dot(qi, &k[j * d + off..j * d + off + hd]) * scale;
                scores[j] = s;
                max = max.max(s);
            }
            let mut sum = 0f32;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let out = &mut ctx[i * d + off..i * d + off + hd];
            for j in 0..n {
                let a = scores[j] / sum;
                let vj = &v[j * d + off..j * d + off + hd];
                for (o, x) in out.iter_mut().zip(vj) {
                    *o += a * x;
                }
            }
        }
    }
    Ok(linear(&ctx, n, t("proj.weight")?, t("proj.bias")?, d))
}

pub fn encode_tile(weights: &ModelWeights, tile: &PixelBlock) -> Result<PatchFeatureGrid> {
    let cfg = &weights.config;
    let d = cfg.embed_dim;
    let n = cfg.tokens();
    let get = |name: &str| weights.get(name).map(|t| &t.data);

    let mut x = patch_embed_prebias(weights, tile)?;
    let bias = get("patch_embed.bias")?;
    let pos = get("pos_embed")?;
    for (i, v) in x.iter_mut().enumerate() {
        *v += bias[i % d] + pos[i];
    }

    for blk in 0..cfg.depth {
        let pre = format!("blocks.{blk}");
        let g = |name: &str| get(&format!("{pre}.{name}"));
        let h = layer_norm(&x, d, g("norm1.weight")?, g("norm1.bias")?);
        let a = attention(&h, n, weights, &pre)?;
        x.iter_mut().zip(&a).for_each(|(x, a)| *x += a);

        let h = layer_norm(&x, d, g("norm2.weight")?, g("norm2.bias")?);
        let hidden = cfg.hidden_dim();
        let mut m = linear(&h, n, g("mlp.fc1.weight")?, g("mlp.fc1.bias")?, hidden);
        m.iter_mut().for_each(|v| *v = gelu(*v));
        let m = linear(&m, n, g("mlp.fc2.weight")?, g("mlp.fc2.bias")?, d);
        x.iter_mut().zip(&m).for_each(|(x, m)| *x += m);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("activation after block {blk}")));
        }
    }
    let out = layer_norm(&x, d, get("norm.weight")?, get("norm.bias")?);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("encoder output".into()));
    }
    Ok(PatchFeatureGrid {
        col_off: tile.col_off,
        row_off: tile.row_off,
        grid: cfg.grid(),
        dim: d,
        data: out,
    })
}
