use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit_classifier, AlgorithmSpec, Dataset, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CvScheme {
    RandomKfold { k: usize, seed: u64 },
    /// One fold per distinct value of the `fold` property, ascending.
    ColumnFold,
    /// Single evaluation from the `split` property.
    ColumnSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub name: String,
    pub train_size: usize,
    pub test_size: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub scheme: CvScheme,
    pub algorithm: AlgorithmSpec,
    pub classes: Vec<String>,
    pub folds: Vec<FoldReport>,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
}

/// Shuffle `0..n` with `seed` and cut into `k` contiguous folds; the first
/// `n mod k` folds hold one extra index.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("k-fold needs 2 <= k <= n, got k={k}, n={n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

/// Confusion matrix, accuracy and macro-F1 over the classes present in `truth`.
pub fn score(truth: &[usize], predicted: &[usize], n_classes: usize) -> (Vec<Vec<usize>>, f64, f64) {
    let mut cm = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        cm[t][p] += 1;
    }
    let total = truth.len();
    let correct: usize = (0..n_classes).map(|c| cm[c][c]).sum();
    let mut f1s = Vec::new();
    for c in 0..n_classes {
        let support: usize = cm[c].iter().sum();
        if support == 0 {
            continue;
        }
        let predicted_c: usize = (0..n_classes).map(|r| cm[r][c]).sum();
        let tp = cm[c][c];
        f1s.push(2.0 * tp as f64 / (support + predicted_c) as f64);
    }
    let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    let macro_f1 = if f1s.is_empty() { 0.0 } else { f1s.iter().sum::<f64>() / f1s.len() as f64 };
    (cm, accuracy, macro_f1)
}

fn mean_std(v: &[f64]) -> MeanStd {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    MeanStd { mean, std }
}

/// `(name, test indices)` per fold; training is the complement.
fn folds(ds: &Dataset, scheme: &CvScheme) -> Result<Vec<(String, Vec<usize>, Vec<usize>)>> {
    let n = ds.len();
    let complement = |test: &[usize]| {
        let set: BTreeSet<usize> = test.iter().copied().collect();
        (0..n).filter(|i| !set.contains(i)).collect::<Vec<_>>()
    };
    Ok(match scheme {
        CvScheme::RandomKfold { k, seed } => kfold_indices(n, *k, *seed)?
            .into_iter()
            .enumerate()
            .map(|(f, test)| (format!("fold {f}"), complement(&test), test))
            .collect(),
        CvScheme::ColumnFold => {
            if let Some(i) = ds.folds.iter().position(Option::is_none) {
                return Err(Error::invalid(format!("column-fold: point {i} has no 'fold' property")));
            }
            let values: BTreeSet<i64> = ds.folds.iter().flatten().copied().collect();
            if values.len() < 2 {
                return Err(Error::invalid("column-fold needs at least 2 distinct fold values"));
            }
            values
                .into_iter()
                .map(|v| {
                    let test: Vec<usize> = (0..n).filter(|&i| ds.folds[i] == Some(v)).collect();
                    (format!("fold {v}"), complement(&test), test)
                })
                .collect()
        }
        CvScheme::ColumnSplit => {
            if let Some(i) = ds.splits.iter().position(Option::is_none) {
                return Err(Error::invalid(format!("column-split: point {i} has no 'split' property")));
            }
            let pick = |s: Split| (0..n).filter(|&i| ds.splits[i] == Some(s)).collect::<Vec<_>>();
            vec![("split".to_string(), pick(Split::Train), pick(Split::Test))]
        }
    })
}

pub fn cross_validate(ds: &Dataset, scheme: &CvScheme, algorithm: &AlgorithmSpec, seed: u64) -> Result<CvReport> {
    let mut reports = Vec::new();
    for (name, train, test) in folds(ds, scheme)? {
        let train_classes: BTreeSet<usize> = train.iter().map(|&i| ds.y[i]).collect();
        if test.is_empty() || train_classes.len() < 2 {
            return Err(Error::invalid(format!(
                "{name} is degenerate: {} test rows, {} training classes",
                test.len(),
                train_classes.len()
            )));
        }
        let model = fit_classifier(&ds.subset(&train), algorithm, seed)?;
        let truth: Vec<usize> = test.iter().map(|&i| ds.y[i]).collect();
        let predicted: Vec<usize> = test.iter().map(|&i| model.predict(&ds.x[i])).collect();
        let (confusion, accuracy, macro_f1) = score(&truth, &predicted, ds.class_count());
        reports.push(FoldReport {
            name,
            train_size: train.len(),
            test_size: test.len(),
            confusion,
            accuracy,
            macro_f1,
        });
    }
    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let f1: Vec<f64> = reports.iter().map(|r| r.macro_f1).collect();
    Ok(CvReport {
        scheme: scheme.clone(),
        algorithm: algorithm.clone(),
        classes: ds.classes.clone(),
        folds: reports,
        accuracy: mean_std(&acc),
        macro_f1: mean_std(&f1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoml::Metric;

    #[test]
    fn fold_sizes() {
        let sizes = |n, k| kfold_indices(n, k, 3).unwrap().iter().map(Vec::len).collect::<Vec<_>>();
        assert_eq!(sizes(10, 5), vec![2; 5]);
        assert_eq!(sizes(11, 5), vec![3, 2, 2, 2, 2]);
        assert!(kfold_indices(3, 5, 0).is_err());
        assert!(kfold_indices(3, 1, 0).is_err());
    }

    #[test]
    fn metrics_by_hand() {
        // truth 0,0,1,1,2 ; predicted 0,1,1,1,0
        let (cm, acc, f1) = score(&[0, 0, 1, 1, 2], &[0, 1, 1, 1, 0], 4);
        assert_eq!(cm[0], vec![1, 1, 0, 0]);
        assert_eq!(cm[2], vec![1, 0, 0, 0]);
        assert_eq!(acc, 0.6);
        // F1: class0 2/4, class1 4/5, class2 0; class3 absent
        assert!((f1 - (0.5 + 0.8 + 0.0) / 3.0).abs() < 1e-12);
    }

    fn ds(splits: Vec<Option<Split>>, folds: Vec<Option<i64>>) -> Dataset {
        let n = splits.len();
        Dataset {
            x: (0..n).map(|i| vec![(i % 2) as f64 * 10.0 + i as f64 * 0.01]).collect(),
            y: (0..n).map(|i| i % 2).collect(),
            classes: vec!["a".into(), "b".into()],
            cells: (0..n).collect(),
            folds,
            splits,
        }
    }

    #[test]
    fn column_schemes() {
        let knn = AlgorithmSpec::Knn { k: 1, metric: Metric::Euclidean };
        let s = |v: &str| Some(if v == "t" { Split::Train } else { Split::Test });
        let d = ds(vec![s("t"), s("t"), s("t"), s("t"), s("e"), s("e")], vec![Some(1), Some(1), Some(2), Some(2), Some(3), Some(3)]);
        let r = cross_validate(&d, &CvScheme::ColumnSplit, &knn, 0).unwrap();
        assert_eq!(r.folds[0].confusion, vec![vec![1, 0], vec![0, 1]]);
        assert_eq!(r.accuracy.mean, 1.0);
        let r = cross_validate(&d, &CvScheme::ColumnFold, &knn, 0).unwrap();
        assert_eq!(r.folds.len(), 3);
        assert_eq!(r.folds.iter().map(|f| f.test_size).sum::<usize>(), 6);

        let missing = ds(vec![s("t"), None, s("e"), s("e")], vec![None; 4]);
        assert!(cross_validate(&missing, &CvScheme::ColumnSplit, &knn, 0).is_err());
        assert!(cross_validate(&missing, &CvScheme::ColumnFold, &knn, 0).is_err());
    }
}
