use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::Index;
use crate::error::{RacError, Result};

/// Mean fraction of the exact top-k that the approximate index returns.
pub fn recall_at_k(approx: &Index, exact: &Index, queries: &[Vec<f32>], k: usize) -> Result<f64> {
    if approx.dim() != exact.dim()
        || approx.len() != exact.len()
        || approx.metric() != exact.metric()
        || approx.store().ids() != exact.store().ids()
    {
        return Err(RacError::input(
            "recall needs two indexes over the same store and metric",
        ));
    }
    if queries.is_empty() {
        return Err(RacError::input("recall needs at least one query"));
    }
    let mut total = 0.0;
    for q in queries {
        let truth = exact.query(q, k)?;
        let found: HashSet<u64> = approx.query(q, k)?.ids.into_iter().collect();
        let hits = truth.ids.iter().filter(|id| found.contains(id)).count();
        total += hits as f64 / truth.len() as f64;
    }
    Ok(total / queries.len() as f64)
}

/// Per-query wall-clock seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryTiming {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Absent for indexes loaded from disk.
    pub build_seconds_per_key: Option<f64>,
    pub query: QueryTiming,
    /// Mean per-query time of each repeat.
    pub run_means: Vec<f64>,
}

/// Times every query `repeats` times. A query's time is its mean over the
/// repeats; the summary statistics are taken over queries.
pub fn bench_index(
    index: &Index,
    queries: &[Vec<f32>],
    k: usize,
    repeats: usize,
) -> Result<BenchReport> {
    if repeats < 1 {
        return Err(RacError::config("repeats must be >= 1"));
    }
    if queries.is_empty() {
        return Err(RacError::input("benchmark needs at least one query"));
    }
    let mut per_query = vec![0.0; queries.len()];
    let mut run_means = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut run_total = 0.0;
        for (slot, q) in per_query.iter_mut().zip(queries) {
            let start = Instant::now();
            let n = index.query(q, k)?;
            let dt = start.elapsed().as_secs_f64();
            std::hint::black_box(n);
            *slot += dt;
            run_total += dt;
        }
        run_means.push(run_total / queries.len() as f64);
    }
    for t in &mut per_query {
        *t /= repeats as f64;
    }
    let mean = per_query.iter().sum::<f64>() / per_query.len() as f64;
    per_query.sort_by(f64::total_cmp);
    Ok(BenchReport {
        build_seconds_per_key: index.build_seconds().map(|s| s / index.len() as f64),
        query: QueryTiming {
            mean,
            p50: percentile(&per_query, 0.50),
            p95: percentile(&per_query, 0.95),
        },
        run_means,
    })
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}
