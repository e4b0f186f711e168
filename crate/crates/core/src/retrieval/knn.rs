use crate::ann::{Index, Neighbors};
use crate::error::{RacError, Result};

/// Majority label among the hits; ties go to the label seen first, i.e.
/// nearest.
pub fn vote(neighbors: &Neighbors, label_of: impl Fn(u64) -> Result<usize>) -> Result<usize> {
    let mut tally: Vec<(usize, usize)> = Vec::new();
    for &id in &neighbors.ids {
        let y = label_of(id)?;
        match tally.iter_mut().find(|(label, _)| *label == y) {
            Some((_, n)) => *n += 1,
            None => tally.push((y, 1)),
        }
    }
    let mut best: Option<(usize, usize)> = None;
    for (y, n) in tally {
        if best.is_none_or(|(_, bn)| n > bn) {
            best = Some((y, n));
        }
    }
    best.map(|(y, _)| y)
        .ok_or_else(|| RacError::input("no neighbors to vote"))
}

/// Predicts each query's label from its `k` nearest indexed records.
/// `labels[id]` is the class of record `id`.
pub fn knn_classify(index: &Index, labels: &[usize], queries: &[Vec<f32>], k: usize) -> Result<Vec<usize>> {
    if index.len() != labels.len() {
        return Err(RacError::input(format!(
            "{} labels for an index of {} records",
            labels.len(),
            index.len()
        )));
    }
    let label_of = |id: u64| {
        labels
            .get(id as usize)
            .copied()
            .ok_or_else(|| RacError::input(format!("record id {id} has no label")))
    };
    queries
        .iter()
        .map(|q| vote(&index.query(q, k)?, label_of))
        .collect()
}
