use serde::{Deserialize, Serialize};

use super::RetrievalModule;
use crate::dataspace::Dataset;
use crate::error::{RacError, Result};

pub const HISTOGRAM_BINS: usize = 16;
/// Entries kept in the retrieved-label and label-count lists.
pub const REPORT_TOP: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedLabel {
    pub label: String,
    pub distance: f32,
    pub exact_match: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f32>,
    pub counts: Vec<usize>,
}

/// What one query retrieved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectRecord {
    pub query_id: usize,
    pub true_label: String,
    pub retrieved: Vec<RetrievedLabel>,
    pub counts: Vec<LabelCount>,
    pub histogram: Histogram,
}

/// Equal-width bins over `[min, max]` of the values; the last bin is
/// closed. A constant sample gets unit-width bins starting at its value.
pub fn histogram(values: &[f32], bins: usize) -> Histogram {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let (lo, width) = if values.is_empty() {
        (0.0, 1.0 / bins as f32)
    } else if hi > lo {
        (lo, (hi - lo) / bins as f32)
    } else {
        (lo, 1.0 / bins as f32)
    };
    let edges = (0..=bins).map(|i| lo + width * i as f32).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

/// Reports the `k` nearest hits of the first `n` samples of `queries` as
/// evaluation lookups (no drop). `true_names` renders the query labels.
pub fn inspect_retrievals(
    module: &RetrievalModule,
    queries: &Dataset,
    true_names: &[String],
    n: usize,
    k: usize,
) -> Result<Vec<InspectRecord>> {
    if n < 1 || k < 1 {
        return Err(RacError::config("inspect needs n >= 1 and k >= 1"));
    }
    queries
        .samples()
        .iter()
        .take(n)
        .enumerate()
        .map(|(qid, s)| {
            let truth = true_names
                .get(s.label)
                .ok_or_else(|| RacError::input(format!("no label text for class {}", s.label)))?;
            let hits = module.index.query(&module.encoder.encode(&s.features)?, k)?;
            let labels = hits
                .ids
                .iter()
                .map(|&id| module.store.text(id))
                .collect::<Result<Vec<_>>>()?;
            let retrieved = labels
                .iter()
                .zip(&hits.distances)
                .take(REPORT_TOP)
                .map(|(l, &d)| RetrievedLabel {
                    label: l.to_string(),
                    distance: d,
                    exact_match: *l == truth,
                })
                .collect();
            let mut counts: Vec<LabelCount> = Vec::new();
            for l in &labels {
                match counts.iter_mut().find(|c| c.label == *l) {
                    Some(c) => c.count += 1,
                    None => counts.push(LabelCount {
                        label: l.to_string(),
                        count: 1,
                    }),
                }
            }
            // Stable: equal counts stay in order of first (nearest) appearance.
            counts.sort_by(|a, b| b.count.cmp(&a.count));
            counts.truncate(REPORT_TOP);
            Ok(InspectRecord {
                query_id: qid,
                true_label: truth.clone(),
                retrieved,
                counts,
                histogram: histogram(&hits.distances, HISTOGRAM_BINS),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_every_value() {
        let vals: Vec<f32> = (0..30).map(|i| i as f32 * 0.37).collect();
        let h = histogram(&vals, 16);
        assert_eq!(h.edges.len(), 17);
        assert_eq!(h.counts.iter().sum::<usize>(), 30);
        assert_eq!(h.counts[15], 2);
        let flat = histogram(&[2.0; 5], 16);
        assert_eq!(flat.counts[0], 5);
    }
}
