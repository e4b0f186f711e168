use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::{sq_l2, KeyStore, Metric, Neighbors};
use crate::error::{RacError, Result};

/// Full-scan index: every query visits every key.
#[derive(Debug)]
pub struct ExactIndex {
    store: KeyStore,
    metric: Metric,
    pub(crate) build_seconds: Option<f64>,
}

#[derive(PartialEq)]
struct Worst(f64, u64);

impl Eq for Worst {}

impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl ExactIndex {
    pub fn build(store: KeyStore, metric: Metric) -> Result<Self> {
        if store.is_empty() {
            return Err(RacError::input("cannot index an empty key store"));
        }
        let start = Instant::now();
        let store = store.prepared(metric);
        Ok(ExactIndex {
            store,
            metric,
            build_seconds: Some(start.elapsed().as_secs_f64()),
        })
    }

    pub(crate) fn from_parts(store: KeyStore, metric: Metric) -> Self {
        ExactIndex {
            store,
            metric,
            build_seconds: None,
        }
    }

    pub fn store(&self) -> &KeyStore {
        &self.store
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// `q` must already be prepared for the metric.
    pub(crate) fn search(&self, q: &[f32], k: usize) -> Neighbors {
        let k = k.min(self.store.len());
        let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
        for (pos, &id) in self.store.ids().iter().enumerate() {
            let d = sq_l2(q, self.store.key(pos));
            if heap.len() < k {
                heap.push(Worst(d, id));
            } else if let Some(top) = heap.peek() {
                if Worst(d, id) < *top {
                    heap.pop();
                    heap.push(Worst(d, id));
                }
            }
        }
        let cands = heap.into_iter().map(|w| (w.0, w.1)).collect();
        Neighbors::from_candidates(cands, k)
    }
}
