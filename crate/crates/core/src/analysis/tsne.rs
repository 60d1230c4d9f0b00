//! Exact O(n^2) t-SNE.
//!
//! Gains follow the usual delta-bar-delta rule (+0.2 on sign change, x0.8
//! otherwise, floor 0.01) and the embedding is re-centered every step.

use serde::{Deserialize, Serialize};

use super::{fit_pca, PixelSample};
use crate::error::{Error, Result};

const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 50;
const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;
const MOMENTUM_SWITCH: usize = 250;
const MAX_N: usize = 10_000;
const INIT_STD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneParams {
    pub dims: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            dims: 2,
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub n: usize,
    pub dims: usize,
    /// Row-major `n x dims`.
    pub embedding: Vec<f64>,
    pub kl_initial: f64,
    pub kl_final: f64,
}

impl TsneResult {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.embedding[i * self.dims..(i + 1) * self.dims]
    }
}

fn squared_distances(s: &PixelSample) -> Vec<f64> {
    let n = s.n;
    let mut d = vec![0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = super::sq_dist(s.row(i), s.row(j));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional affinities with a per-point precision matched to `perplexity`,
/// then symmetrized and normalized to sum 1.
fn joint_probabilities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0f64; n * n];
    let mut row = vec![0f64; n];
    for i in 0..n {
        let di = &dist[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0f64, f64::NEG_INFINITY, f64::INFINITY);
        for _ in 0..MAX_BISECTIONS {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                row[j] = if j == i { 0.0 } else { (-di[j] * beta).exp() };
                sum += row[j];
                weighted += di[j] * row[j];
            }
            let sum = sum.max(f64::MIN_POSITIVE);
            let entropy = sum.ln() + beta * weighted / sum;
            row.iter_mut().for_each(|v| *v /= sum);
            let diff = entropy - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_infinite() { beta * 2.0 } else { (beta + hi) / 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_infinite() { beta / 2.0 } else { (beta + lo) / 2.0 };
            }
        }
        p[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    let mut joint = vec![0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    joint
}

/// Student-t kernel `1 / (1 + |yi - yj|^2)` and its off-diagonal sum.
fn kernel(y: &[f64], n: usize, dims: usize) -> (Vec<f64>, f64) {
    let mut num = vec![0f64; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = (0..dims).map(|k| (y[i * dims + k] - y[j * dims + k]).powi(2)).sum();
            let v = 1.0 / (1.0 + d);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

fn kl_divergence(p: &[f64], y: &[f64], n: usize, dims: usize) -> f64 {
    let (num, sum) = kernel(y, n, dims);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let q = (num[i * n + j] / sum).max(1e-12);
                let pij = p[i * n + j];
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

/// Leading principal coordinates, each column rescaled to `INIT_STD`.
/// Columns beyond the data rank stay zero.
fn pca_init(s: &PixelSample, dims: usize) -> Result<Vec<f64>> {
    let n = s.n;
    let mut y = vec![0f64; n * dims];
    let k = dims.min(s.d).min(n - 1);
    let model = fit_pca(s, k)?;
    for i in 0..n {
        for (c, v) in model.transform(s.row(i)).into_iter().enumerate() {
            y[i * dims + c] = v;
        }
    }
    for c in 0..k {
        let mean = (0..n).map(|i| y[i * dims + c]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (y[i * dims + c] - mean).powi(2)).sum::<f64>() / n as f64;
        let f = if var > 0.0 { INIT_STD / var.sqrt() } else { 0.0 };
        for i in 0..n {
            y[i * dims + c] = (y[i * dims + c] - mean) * f;
        }
    }
    Ok(y)
}

pub fn tsne_embed(sample: &PixelSample, params: &TsneParams) -> Result<TsneResult> {
    let n = sample.n;
    let dims = params.dims;
    if !(2..=3).contains(&dims) {
        return Err(Error::invalid(format!("t-SNE dims must be 2 or 3, got {dims}")));
    }
    if !(params.perplexity > 0.0) || !params.perplexity.is_finite() {
        return Err(Error::invalid("perplexity must be positive"));
    }
    if (n as f64) < 3.0 * params.perplexity + 1.0 {
        return Err(Error::invalid(format!(
            "t-SNE with perplexity {} needs at least {} samples, got {n}",
            params.perplexity,
            (3.0 * params.perplexity + 1.0).ceil()
        )));
    }
    if n > MAX_N {
        return Err(Error::invalid(format!("exact t-SNE is limited to {MAX_N} samples, got {n}")));
    }
    sample.check_finite()?;

    let p = joint_probabilities(&squared_distances(sample), n, params.perplexity);
    let mut y = pca_init(sample, dims)?;
    let kl_initial = kl_divergence(&p, &y, n, dims);

    let mut update = vec![0f64; n * dims];
    let mut gains = vec![1f64; n * dims];
    let mut grad = vec![0f64; n * dims];
    for iter in 0..params.iterations {
        let exaggeration = if iter < EXAGGERATION_ITERS { EXAGGERATION } else { 1.0 };
        let momentum = if iter < MOMENTUM_SWITCH { 0.5 } else { 0.8 };
        let (num, sum) = kernel(&y, n, dims);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exaggeration * p[i * n + j] - num[i * n + j] / sum) * num[i * n + j];
                for k in 0..dims {
                    grad[i * dims + k] += 4.0 * w * (y[i * dims + k] - y[j * dims + k]);
                }
            }
        }
        for idx in 0..n * dims {
            gains[idx] = if (grad[idx] > 0.0) != (update[idx] > 0.0) {
                gains[idx] + 0.2
            } else {
                gains[idx] * 0.8
            }
            .max(0.01);
            update[idx] = momentum * update[idx] - params.learning_rate * gains[idx] * grad[idx];
            y[idx] += update[idx];
        }
        for k in 0..dims {
            let mean = (0..n).map(|i| y[i * dims + k]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[i * dims + k] -= mean);
        }
    }
    let kl_final = kl_divergence(&p, &y, n, dims);
    Ok(TsneResult {
        n,
        dims,
        embedding: y,
        kl_initial,
        kl_final,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibrated_rows_hit_target_perplexity() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin() * 3.0, i as f64 * 0.1]).collect();
        let s = PixelSample::from_rows(&rows).unwrap();
        let d = squared_distances(&s);
        let p = joint_probabilities(&d, 30, 5.0);
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        for i in 0..30 {
            for j in 0..30 {
                assert_eq!(p[i * 30 + j], p[j * 30 + i]);
            }
        }
    }

    #[test]
    fn rejects_small_n_and_bad_params() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        let s = PixelSample::from_rows(&rows).unwrap();
        let p = TsneParams { perplexity: 5.0, ..TsneParams::default() };
        assert!(tsne_embed(&s, &p).is_err());
        let p = TsneParams { perplexity: 0.0, ..TsneParams::default() };
        assert!(tsne_embed(&s, &p).is_err());
        let p = TsneParams { perplexity: 2.0, dims: 4, ..TsneParams::default() };
        assert!(tsne_embed(&s, &p).is_err());
    }

    #[test]
    fn shape_and_determinism() {
        let rows: Vec<Vec<f64>> = (0..16).map(|i| vec![(i as f64).cos(), (i as f64 * 1.3).sin(), i as f64 * 0.05]).collect();
        let s = PixelSample::from_rows(&rows).unwrap();
        let p = TsneParams { dims: 3, perplexity: 4.0, iterations: 100, ..TsneParams::default() };
        let a = tsne_embed(&s, &p).unwrap();
        assert_eq!(a.embedding.len(), 16 * 3);
        assert_eq!(a, tsne_embed(&s, &p).unwrap());
    }
}
