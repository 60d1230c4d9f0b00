//! CART random forest with Gini splits.
//!
//! At each node a random subset of features is drawn and evaluated in
//! ascending index order. When none of them admits a split (all constant in
//! the node), further features are drawn one at a time until one does or
//! all are exhausted. Impure nodes accept zero-gain splits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` means `floor(sqrt(D))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Leaf { class: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, v: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { class } => return class,
                Node::Split { feature, threshold, left, right } => {
                    i = if v[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub params: ForestParams,
    pub seed: u64,
    pub n_classes: usize,
    pub trees: Vec<Tree>,
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    params: &'a ForestParams,
    per_split: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

/// Best split of `idx` on `feature`: (score, threshold), maximizing
/// `sum over children of sum_k count_k^2 / n_child` (equivalent to minimizing
/// weighted Gini impurity). The first maximal threshold wins.
fn best_threshold(x: &[Vec<f64>], y: &[usize], n_classes: usize, idx: &[usize], feature: usize, min_leaf: usize) -> Option<(f64, f64)> {
    let mut order: Vec<usize> = idx.to_vec();
    order.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]));
    let n = order.len();
    let mut right = vec![0usize; n_classes];
    for &i in &order {
        right[y[i]] += 1;
    }
    let mut left = vec![0usize; n_classes];
    let sq = |c: &[usize]| c.iter().map(|&v| (v * v) as f64).sum::<f64>();
    let mut best: Option<(f64, f64)> = None;
    for pos in 0..n - 1 {
        let i = order[pos];
        left[y[i]] += 1;
        right[y[i]] -= 1;
        let (a, b) = (x[i][feature], x[order[pos + 1]][feature]);
        if a == b {
            continue;
        }
        let (nl, nr) = (pos + 1, n - pos - 1);
        if nl < min_leaf || nr < min_leaf {
            continue;
        }
        let score = sq(&left) / nl as f64 + sq(&right) / nr as f64;
        if best.is_none_or(|(s, _)| score > s) {
            let mut t = a + (b - a) / 2.0;
            if t >= b {
                t = a;
            }
            best = Some((score, t));
        }
    }
    best
}

impl Builder<'_> {
    fn grow(&mut self, idx: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let mut counts = vec![0usize; self.n_classes];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        self.nodes.push(Node::Leaf { class: majority(&counts) });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let capped = self.params.max_depth.is_some_and(|m| depth >= m);
        if pure || capped || idx.len() < 2 * self.params.min_samples_leaf.max(1) {
            return id;
        }

        let d = self.x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(&mut self.rng);
        let mut drawn: Vec<usize> = features[..self.per_split].to_vec();
        drawn.sort_unstable();
        let mut best: Option<(f64, usize, f64)> = None;
        let min_leaf = self.params.min_samples_leaf.max(1);
        for &f in &drawn {
            if let Some((s, t)) = best_threshold(self.x, self.y, self.n_classes, idx, f, min_leaf) {
                if best.is_none_or(|b| s > b.0) {
                    best = Some((s, f, t));
                }
            }
        }
        for &f in &features[self.per_split..] {
            if best.is_some() {
                break;
            }
            best = best_threshold(self.x, self.y, self.n_classes, idx, f, min_leaf).map(|(s, t)| (s, f, t));
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

pub fn fit_random_forest(ds: &Dataset, params: &ForestParams, seed: u64) -> Result<RandomForest> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::invalid("random forest needs at least 2 samples"));
    }
    let distinct = {
        let mut seen = vec![false; ds.class_count()];
        ds.y.iter().for_each(|&c| seen[c] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::invalid("random forest needs at least 2 classes"));
    }
    if params.n_trees == 0 {
        return Err(Error::invalid("n_trees must be at least 1"));
    }
    let d = ds.dim();
    let per_split = params.features_per_split.unwrap_or(((d as f64).sqrt().floor() as usize).max(1));
    if per_split == 0 || per_split > d {
        return Err(Error::invalid(format!("features_per_split {per_split} outside 1..={d}")));
    }
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            let idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = Builder {
                x: &ds.x,
                y: &ds.y,
                n_classes: ds.class_count(),
                params,
                per_split,
                rng,
                nodes: Vec::new(),
            };
            b.grow(&idx, 0);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(RandomForest {
        params: params.clone(),
        seed,
        n_classes: ds.class_count(),
        trees,
    })
}

impl RandomForest {
    /// Majority over trees; ties go to the lowest class code.
    pub fn predict(&self, v: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        for t in &self.trees {
            votes[t.predict(v)] += 1;
        }
        majority(&votes)
    }
}
