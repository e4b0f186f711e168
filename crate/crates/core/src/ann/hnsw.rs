//! Hierarchical navigable small world graph.
//!
//! Nodes are inserted in key order. Each node gets a level drawn as
//! `floor(-ln(U) * level_lambda)`; it is linked on every layer up to that
//! level. Neighbor lists are chosen with the diversity heuristic (a
//! candidate is kept only if it is closer to the new node than to every
//! neighbor already kept) and capped at `M` on upper layers and `2M` on
//! layer 0. Level draws come from a seeded RNG, so a build is a pure
//! function of (keys, metric, params).

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sq_l2, KeyStore, Metric, Neighbors};
use crate::error::{RacError, Result};

const MAX_LEVEL: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Bidirectional links per node on upper layers; layer 0 allows `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    /// Query beam width. `None` means `max(2k, 100)`; never below `k`.
    pub ef_search: Option<usize>,
    /// Level assignment rate. `None` means `1 / ln(m)`.
    pub level_lambda: Option<f64>,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 32,
            ef_construction: 200,
            ef_search: None,
            level_lambda: None,
            seed: 0,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(RacError::config(format!("M must be >= 2, got {}", self.m)));
        }
        if self.ef_construction < self.m {
            return Err(RacError::config(format!(
                "ef_construction ({}) must be >= M ({})",
                self.ef_construction, self.m
            )));
        }
        if let Some(lambda) = self.level_lambda {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(RacError::config("level_lambda must be positive"));
            }
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.level_lambda
            .unwrap_or_else(|| 1.0 / (self.m as f64).ln())
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }
}

/// (squared distance, node position), ordered by distance then position.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Cand(f64, u32);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Visited marks that reset in O(1) by bumping an epoch.
#[derive(Debug)]
struct VisitedList {
    marks: Vec<u32>,
    epoch: u32,
}

impl VisitedList {
    fn new(n: usize) -> Self {
        VisitedList {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.fill(0);
            self.epoch = 1;
        }
    }

    /// Marks `i`; returns false if it was already marked this epoch.
    #[inline]
    fn visit(&mut self, i: u32) -> bool {
        let slot = &mut self.marks[i as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

/// Graph view used by both build and query.
struct Graph<'a> {
    store: &'a KeyStore,
    links: &'a [Vec<Vec<u32>>],
}

impl Graph<'_> {
    #[inline]
    fn dist(&self, q: &[f32], node: u32) -> f64 {
        sq_l2(q, self.store.key(node as usize))
    }

    fn greedy(&self, q: &[f32], mut ep: Cand, layer: usize) -> Cand {
        loop {
            let mut changed = false;
            for &n in &self.links[ep.1 as usize][layer] {
                let c = Cand(self.dist(q, n), n);
                if c < ep {
                    ep = c;
                    changed = true;
                }
            }
            if !changed {
                return ep;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` candidates, nearest first.
    fn search_layer(
        &self,
        q: &[f32],
        ep: Cand,
        ef: usize,
        layer: usize,
        visited: &mut VisitedList,
    ) -> Vec<Cand> {
        visited.reset();
        visited.visit(ep.1);
        let mut frontier = BinaryHeap::new();
        let mut best = BinaryHeap::new();
        frontier.push(Reverse(ep));
        best.push(ep);
        while let Some(Reverse(c)) = frontier.pop() {
            let worst = *best.peek().expect("non-empty");
            if c > worst && best.len() >= ef {
                break;
            }
            for &n in &self.links[c.1 as usize][layer] {
                if !visited.visit(n) {
                    continue;
                }
                let cand = Cand(self.dist(q, n), n);
                if best.len() < ef || cand < *best.peek().expect("non-empty") {
                    frontier.push(Reverse(cand));
                    best.push(cand);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    /// Keeps candidates (sorted ascending) that are closer to the base
    /// point than to any already-kept candidate, up to `m`.
    fn select_diverse(&self, sorted: &[Cand], m: usize) -> Vec<u32> {
        let mut kept: Vec<Cand> = Vec::with_capacity(m);
        for &c in sorted {
            if kept.len() >= m {
                break;
            }
            let key = self.store.key(c.1 as usize);
            if kept.iter().all(|s| self.dist(key, s.1) >= c.0) {
                kept.push(c);
            }
        }
        kept.into_iter().map(|c| c.1).collect()
    }
}

pub struct HnswIndex {
    store: KeyStore,
    metric: Metric,
    params: HnswParams,
    levels: Vec<u8>,
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
    visited_pool: Mutex<Vec<VisitedList>>,
    pub(crate) build_seconds: Option<f64>,
}

impl std::fmt::Debug for HnswIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HnswIndex")
            .field("len", &self.store.len())
            .field("dim", &self.store.dim())
            .field("metric", &self.metric)
            .field("params", &self.params)
            .field("max_level", &self.max_level)
            .finish()
    }
}

impl HnswIndex {
    pub fn build(store: KeyStore, metric: Metric, params: HnswParams) -> Result<Self> {
        params.validate()?;
        if store.is_empty() {
            return Err(RacError::input("cannot index an empty key store"));
        }
        let start = Instant::now();
        let store = store.prepared(metric);
        let n = store.len();
        let levels = draw_levels(n, &params);
        let mut links: Vec<Vec<Vec<u32>>> = levels
            .iter()
            .map(|&l| vec![Vec::new(); l as usize + 1])
            .collect();
        let mut visited = VisitedList::new(n);
        let mut entry = 0u32;
        let mut max_level = levels[0] as usize;

        for node in 1..n as u32 {
            let level = levels[node as usize] as usize;
            let q = store.key(node as usize);
            let mut per_layer: Vec<(usize, Vec<u32>)> = Vec::new();
            {
                let graph = Graph {
                    store: &store,
                    links: &links,
                };
                let mut ep = Cand(graph.dist(q, entry), entry);
                for layer in (level + 1..=max_level).rev() {
                    ep = graph.greedy(q, ep, layer);
                }
                for layer in (0..=level.min(max_level)).rev() {
                    let found =
                        graph.search_layer(q, ep, params.ef_construction, layer, &mut visited);
                    per_layer.push((layer, graph.select_diverse(&found, params.m)));
                    ep = found[0];
                }
            }
            for (layer, chosen) in per_layer {
                for &nb in &chosen {
                    connect(&store, &mut links, nb, node, layer, params.max_links(layer));
                }
                links[node as usize][layer] = chosen;
            }
            if level > max_level {
                max_level = level;
                entry = node;
            }
        }

        Ok(HnswIndex {
            store,
            metric,
            params,
            levels,
            links,
            entry,
            max_level,
            visited_pool: Mutex::new(Vec::new()),
            build_seconds: Some(start.elapsed().as_secs_f64()),
        })
    }

    /// Reassembles a graph read from disk. Keys must already be prepared.
    pub(crate) fn from_parts(
        store: KeyStore,
        metric: Metric,
        params: HnswParams,
        levels: Vec<u8>,
        links: Vec<Vec<Vec<u32>>>,
    ) -> Result<Self> {
        let n = store.len();
        if n == 0 || levels.len() != n || links.len() != n {
            return Err(RacError::format("index graph", "node count mismatch"));
        }
        for (lv, adj) in levels.iter().zip(&links) {
            if adj.len() != *lv as usize + 1 {
                return Err(RacError::format("index graph", "layer count mismatch"));
            }
            if adj.iter().flatten().any(|&nb| nb as usize >= n) {
                return Err(RacError::format("index graph", "neighbor id out of range"));
            }
        }
        let max_level = *levels.iter().max().expect("non-empty") as usize;
        // Insertion order promotes a node to entry only on a strictly higher
        // level, so the entry point is the first node at the top level.
        let entry = levels
            .iter()
            .position(|&l| l as usize == max_level)
            .expect("max exists") as u32;
        Ok(HnswIndex {
            store,
            metric,
            params,
            levels,
            links,
            entry,
            max_level,
            visited_pool: Mutex::new(Vec::new()),
            build_seconds: None,
        })
    }

    pub fn store(&self) -> &KeyStore {
        &self.store
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn set_ef_search(&mut self, ef: Option<usize>) {
        self.params.ef_search = ef;
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn neighbors(&self, node: usize, layer: usize) -> &[u32] {
        &self.links[node][layer]
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub(crate) fn search(&self, q: &[f32], k: usize) -> Neighbors {
        let graph = Graph {
            store: &self.store,
            links: &self.links,
        };
        let mut ep = Cand(graph.dist(q, self.entry), self.entry);
        for layer in (1..=self.max_level).rev() {
            ep = graph.greedy(q, ep, layer);
        }
        let ef = self
            .params
            .ef_search
            .unwrap_or_else(|| (2 * k).max(100))
            .max(k);
        let mut visited = self
            .visited_pool
            .lock()
            .expect("visited pool poisoned")
            .pop()
            .unwrap_or_else(|| VisitedList::new(self.store.len()));
        let found = graph.search_layer(q, ep, ef, 0, &mut visited);
        self.visited_pool
            .lock()
            .expect("visited pool poisoned")
            .push(visited);
        let ids = self.store.ids();
        let cands = found
            .into_iter()
            .map(|c| (c.0, ids[c.1 as usize]))
            .collect();
        Neighbors::from_candidates(cands, k)
    }
}

fn draw_levels(n: usize, params: &HnswParams) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let lambda = params.lambda();
    (0..n)
        .map(|_| {
            let u = 1.0 - rng.random::<f64>();
            ((-u.ln() * lambda).floor() as usize).min(MAX_LEVEL) as u8
        })
        .collect()
}

/// Adds `new` to `node`'s list on `layer`, re-pruning if it overflows.
fn connect(
    store: &KeyStore,
    links: &mut [Vec<Vec<u32>>],
    node: u32,
    new: u32,
    layer: usize,
    cap: usize,
) {
    links[node as usize][layer].push(new);
    if links[node as usize][layer].len() <= cap {
        return;
    }
    let base = store.key(node as usize);
    let mut cands: Vec<Cand> = links[node as usize][layer]
        .iter()
        .map(|&nb| Cand(sq_l2(base, store.key(nb as usize)), nb))
        .collect();
    cands.sort();
    let kept = Graph { store, links }.select_diverse(&cands, cap);
    links[node as usize][layer] = kept;
}
