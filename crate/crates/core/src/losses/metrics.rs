use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dataspace::Bucket;
use crate::error::{RacError, Result};

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in row.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Row-wise argmax of a logit matrix.
pub fn predict(logits: ArrayView2<'_, f64>) -> Vec<usize> {
    logits
        .outer_iter()
        .map(|row| argmax(row.iter().copied()))
        .collect()
}

/// Fraction of samples whose label ranks within the top `k`. Rank counts
/// strictly larger scores plus equal scores at lower class indices, which
/// agrees with [`argmax`] at `k = 1`.
pub fn topk_accuracy(logits: ArrayView2<'_, f64>, labels: &[usize], k: usize) -> Result<f64> {
    let (n, l) = logits.dim();
    if k == 0 || k > l {
        return Err(RacError::input(format!("top-k needs 1 <= k <= {l}, got {k}")));
    }
    if labels.len() != n || n == 0 {
        return Err(RacError::input("labels must match a non-empty logit batch"));
    }
    let mut hits = 0usize;
    for (row, &y) in logits.outer_iter().zip(labels) {
        let fy = row[y];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(c, &v)| v > fy || (v == fy && c < y))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Accuracy per class; `None` for classes absent from `labels`.
pub fn per_class_accuracy(predictions: &[usize], labels: &[usize], classes: usize) -> Vec<Option<f64>> {
    let mut seen = vec![0usize; classes];
    let mut right = vec![0usize; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        seen[y] += 1;
        if p == y {
            right[y] += 1;
        }
    }
    seen.iter()
        .zip(&right)
        .map(|(&s, &r)| (s > 0).then(|| r as f64 / s as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancedError {
    /// Mean per-class error over the classes present in the labels.
    pub value: f64,
    /// Classes with no evaluation samples, left out of the mean.
    pub excluded: Vec<usize>,
}

pub fn balanced_error(predictions: &[usize], labels: &[usize], classes: usize) -> Result<BalancedError> {
    if predictions.len() != labels.len() {
        return Err(RacError::input("predictions and labels differ in length"));
    }
    if let Some(&bad) = labels.iter().chain(predictions).find(|&&y| y >= classes) {
        return Err(RacError::input(format!("class {bad} >= class count {classes}")));
    }
    let acc = per_class_accuracy(predictions, labels, classes);
    let excluded: Vec<usize> = acc
        .iter()
        .enumerate()
        .filter_map(|(c, a)| a.is_none().then_some(c))
        .collect();
    let present: Vec<f64> = acc.into_iter().flatten().collect();
    if present.is_empty() {
        return Err(RacError::input("no evaluation samples"));
    }
    let value = present.iter().map(|a| 1.0 - a).sum::<f64>() / present.len() as f64;
    Ok(BalancedError { value, excluded })
}

/// Mean per-class accuracy within each frequency bucket. A bucket with no
/// evaluated class is `None`, not zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub many: Option<f64>,
    pub med: Option<f64>,
    pub few: Option<f64>,
    pub all: Option<f64>,
}

impl BucketAccuracy {
    pub fn get(&self, bucket: Bucket) -> Option<f64> {
        match bucket {
            Bucket::Many => self.many,
            Bucket::Med => self.med,
            Bucket::Few => self.few,
        }
    }
}

pub fn bucket_accuracy(per_class: &[Option<f64>], buckets: &[Bucket]) -> Result<BucketAccuracy> {
    if per_class.len() != buckets.len() {
        return Err(RacError::input("per-class accuracies and buckets differ in length"));
    }
    let mean = |keep: &dyn Fn(Bucket) -> bool| {
        let vals: Vec<f64> = per_class
            .iter()
            .zip(buckets)
            .filter_map(|(a, &b)| if keep(b) { *a } else { None })
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Ok(BucketAccuracy {
        many: mean(&|b| b == Bucket::Many),
        med: mean(&|b| b == Bucket::Med),
        few: mean(&|b| b == Bucket::Few),
        all: mean(&|_| true),
    })
}
