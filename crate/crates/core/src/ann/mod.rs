//! Exact and HNSW k-nearest-neighbor indexes over `f32` key vectors.
//!
//! Both index kinds share one distance kernel: squared Euclidean distance
//! accumulated in `f64`. Cosine is served as L2 over unit-normalized keys
//! and queries, which orders neighbors identically to cosine similarity.
//! Reported distances are Euclidean (square root of the kernel value).
//!
//! Results are sorted by ascending distance with ties broken by ascending
//! record id. Indexes are write-once; after construction they are safe to
//! query from many threads.

mod bench;
mod exact;
mod hnsw;
mod io;

pub use bench::{bench_index, recall_at_k, BenchReport, QueryTiming};
pub use exact::ExactIndex;
pub use hnsw::{HnswIndex, HnswParams};
pub use io::{load_index, save_index};

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L2,
    Cosine,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::L2 => "l2",
            Metric::Cosine => "cosine",
        }
    }

    /// Brings a vector into the space the kernel compares in.
    pub fn prepare(self, v: &mut [f32]) {
        if self == Metric::Cosine {
            normalize(v);
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = RacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Metric::L2),
            "cosine" => Ok(Metric::Cosine),
            other => Err(RacError::config(format!("unknown metric `{other}`"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Zero vectors are left untouched.
fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

/// Squared Euclidean distance with four fixed-order `f64` accumulators.
#[inline]
pub(crate) fn sq_l2(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..4 {
            let d = x[j] as f64 - y[j] as f64;
            acc[j] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = *x as f64 - *y as f64;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Key vectors `Z` with one record id per key.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyStore {
    dim: usize,
    keys: Vec<f32>,
    ids: Vec<u64>,
}

impl KeyStore {
    pub fn new(dim: usize, keys: Vec<f32>, ids: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(RacError::input("key dimension must be positive"));
        }
        if keys.len() != dim * ids.len() {
            return Err(RacError::input(format!(
                "{} key values do not form {} keys of dimension {dim}",
                keys.len(),
                ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|&&id| !seen.insert(id)) {
            return Err(RacError::input(format!("duplicate record id {dup}")));
        }
        Ok(KeyStore { dim, keys, ids })
    }

    /// Keys from rows, ids `0..rows.len()`.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(RacError::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        let keys = rows.iter().flatten().copied().collect();
        KeyStore::new(dim, keys, (0..rows.len() as u64).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn key(&self, pos: usize) -> &[f32] {
        &self.keys[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn raw_keys(&self) -> &[f32] {
        &self.keys
    }

    /// Appends another store; ids must stay unique.
    pub fn extend(&mut self, other: &KeyStore) -> Result<()> {
        if other.dim != self.dim {
            return Err(RacError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut keys = self.keys.clone();
        keys.extend_from_slice(&other.keys);
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        *self = KeyStore::new(self.dim, keys, ids)?;
        Ok(())
    }

    fn prepared(mut self, metric: Metric) -> Self {
        if metric == Metric::Cosine {
            for row in self.keys.chunks_exact_mut(self.dim) {
                normalize(row);
            }
        }
        self
    }
}

/// Up to `k` record ids with their distances, nearest first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Neighbors {
    pub ids: Vec<u64>,
    pub distances: Vec<f32>,
}

impl Neighbors {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn from_candidates(mut cands: Vec<(f64, u64)>, k: usize) -> Self {
        cands.sort_by(cmp_dist_id);
        cands.truncate(k);
        Neighbors {
            ids: cands.iter().map(|c| c.1).collect(),
            distances: cands.iter().map(|c| c.0.sqrt() as f32).collect(),
        }
    }
}

fn cmp_dist_id(a: &(f64, u64), b: &(f64, u64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Exact,
    Hnsw,
}

impl IndexKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IndexKind::Exact => "exact",
            IndexKind::Hnsw => "hnsw",
        }
    }
}

impl std::str::FromStr for IndexKind {
    type Err = RacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(IndexKind::Exact),
            "hnsw" => Ok(IndexKind::Hnsw),
            other => Err(RacError::config(format!("unknown index type `{other}`"))),
        }
    }
}

#[derive(Debug)]
pub enum Index {
    Exact(ExactIndex),
    Hnsw(HnswIndex),
}

pub fn build_exact(store: KeyStore, metric: Metric) -> Result<Index> {
    Ok(Index::Exact(ExactIndex::build(store, metric)?))
}

pub fn build_hnsw(store: KeyStore, metric: Metric, params: HnswParams) -> Result<Index> {
    Ok(Index::Hnsw(HnswIndex::build(store, metric, params)?))
}

/// How to build an index over a key store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexSpec {
    pub kind: IndexKind,
    pub metric: Metric,
    pub hnsw: HnswParams,
}

impl Default for IndexSpec {
    fn default() -> Self {
        IndexSpec {
            kind: IndexKind::Hnsw,
            metric: Metric::Cosine,
            hnsw: HnswParams::default(),
        }
    }
}

impl IndexSpec {
    pub fn build(&self, store: KeyStore) -> Result<Index> {
        match self.kind {
            IndexKind::Exact => build_exact(store, self.metric),
            IndexKind::Hnsw => build_hnsw(store, self.metric, self.hnsw.clone()),
        }
    }
}

impl Index {
    pub fn kind(&self) -> IndexKind {
        match self {
            Index::Exact(_) => IndexKind::Exact,
            Index::Hnsw(_) => IndexKind::Hnsw,
        }
    }

    pub fn metric(&self) -> Metric {
        match self {
            Index::Exact(i) => i.metric(),
            Index::Hnsw(i) => i.metric(),
        }
    }

    pub fn store(&self) -> &KeyStore {
        match self {
            Index::Exact(i) => i.store(),
            Index::Hnsw(i) => i.store(),
        }
    }

    pub fn dim(&self) -> usize {
        self.store().dim()
    }

    pub fn len(&self) -> usize {
        self.store().len()
    }

    pub fn is_empty(&self) -> bool {
        self.store().is_empty()
    }

    /// Wall-clock build time, when the index was built in this process.
    pub fn build_seconds(&self) -> Option<f64> {
        match self {
            Index::Exact(i) => i.build_seconds,
            Index::Hnsw(i) => i.build_seconds,
        }
    }

    /// Query beam width of an HNSW index; ignored by exact indexes.
    pub fn set_ef_search(&mut self, ef: Option<usize>) {
        if let Index::Hnsw(h) = self {
            h.set_ef_search(ef);
        }
    }

    pub fn query(&self, q: &[f32], k: usize) -> Result<Neighbors> {
        if q.len() != self.dim() {
            return Err(RacError::DimensionMismatch {
                expected: self.dim(),
                got: q.len(),
            });
        }
        if k == 0 {
            return Err(RacError::input("k must be at least 1"));
        }
        let mut q = q.to_vec();
        self.metric().prepare(&mut q);
        Ok(match self {
            Index::Exact(i) => i.search(&q, k),
            Index::Hnsw(i) => i.search(&q, k),
        })
    }

    /// Queries in parallel; output order matches input order.
    pub fn query_batch(&self, queries: &[Vec<f32>], k: usize) -> Result<Vec<Neighbors>> {
        queries.par_iter().map(|q| self.query(q, k)).collect()
    }
}
