use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl Metric {
    fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na.sqrt() * nb.sqrt())
                }
            }
        }
    }
}

/// Brute-force k nearest neighbours over the stored training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub metric: Metric,
    pub n_classes: usize,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
}

pub fn fit_knn(ds: &Dataset, k: usize, metric: Metric) -> Result<KnnModel> {
    if k == 0 || k > ds.len() {
        return Err(Error::invalid(format!("kNN k={k} outside 1..={}", ds.len())));
    }
    Ok(KnnModel {
        k,
        metric,
        n_classes: ds.class_count(),
        x: ds.x.clone(),
        y: ds.y.clone(),
    })
}

impl KnnModel {
    /// Majority vote among the k nearest. A tied vote goes to the class of
    /// the nearest neighbour among the tied classes; equidistant neighbours
    /// are ranked by lower class code.
    pub fn predict(&self, v: &[f64]) -> usize {
        let mut order: Vec<(f64, usize, usize)> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, row)| (self.metric.distance(row, v), self.y[i], i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let nearest = &order[..self.k];
        let mut votes = vec![0usize; self.n_classes];
        for &(_, c, _) in nearest {
            votes[c] += 1;
        }
        let top = *votes.iter().max().unwrap();
        nearest.iter().find(|n| votes[n.1] == top).unwrap().1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(x: Vec<Vec<f64>>, y: Vec<usize>, classes: usize) -> Dataset {
        let n = y.len();
        Dataset {
            x,
            y,
            classes: (0..classes).map(|c| c.to_string()).collect(),
            cells: (0..n).collect(),
            folds: vec![None; n],
            splits: vec![None; n],
        }
    }

    #[test]
    fn k1_memorizes() {
        let d = ds(vec![vec![0.0], vec![1.0], vec![2.5], vec![-3.0]], vec![0, 1, 1, 2], 3);
        let m = fit_knn(&d, 1, Metric::Euclidean).unwrap();
        for (row, &y) in d.x.iter().zip(&d.y) {
            assert_eq!(m.predict(row), y);
        }
    }

    #[test]
    fn majority_then_nearest_tied_class() {
        let d = ds(vec![vec![1.0], vec![-1.0], vec![0.5]], vec![0, 0, 1], 2);
        let m = fit_knn(&d, 3, Metric::Euclidean).unwrap();
        assert_eq!(m.predict(&[0.0]), 0);

        let pair = ds(vec![vec![0.0], vec![10.0]], vec![1, 0], 2);
        let m = fit_knn(&pair, 2, Metric::Euclidean).unwrap();
        assert_eq!(m.predict(&[2.0]), 1);
        assert_eq!(m.predict(&[9.0]), 0);
        assert_eq!(m.predict(&[5.0]), 0);
    }

    #[test]
    fn cosine_ignores_scale() {
        let d = ds(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1], 2);
        let m = fit_knn(&d, 1, Metric::Cosine).unwrap();
        assert_eq!(m.predict(&[100.0, 1.0]), 0);
        assert_eq!(m.predict(&[0.1, 5.0]), 1);
        assert!(fit_knn(&d, 3, Metric::Cosine).is_err());
    }
}
