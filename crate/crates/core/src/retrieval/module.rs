use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{encode_keys, FrozenEncoder, TextStore, Tokenizer, MAX_TOKENS};
use crate::ann::{Index, IndexSpec, KeyStore, Neighbors};
use crate::dataspace::Dataset;
use crate::autodiff::PAD;
use crate::error::{RacError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub drop_first: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { k: 30, drop_first: true }
    }
}

/// Removes one hit from a `k + 1` lookup: the query's own record if it was
/// retrieved, else the nearest hit. Keeps at most `k`.
pub fn drop_first(mut neighbors: Neighbors, self_id: Option<u64>, k: usize) -> Neighbors {
    if !neighbors.ids.is_empty() {
        let pos = self_id
            .and_then(|id| neighbors.ids.iter().position(|&x| x == id))
            .unwrap_or(0);
        neighbors.ids.remove(pos);
        neighbors.distances.remove(pos);
    }
    neighbors.ids.truncate(k);
    neighbors.distances.truncate(k);
    neighbors
}

/// Texts of the hits joined nearest-first by single spaces, tokenized and
/// truncated.
pub fn assemble_text(neighbors: &Neighbors, store: &TextStore, tokenizer: &Tokenizer) -> Result<Vec<u32>> {
    let texts = neighbors
        .ids
        .iter()
        .map(|&id| store.text(id))
        .collect::<Result<Vec<_>>>()?;
    Ok(tokenizer.encode(&texts.join(" ")))
}

/// Right-pads with zeros to the longest sequence (at least one column).
pub fn pad_batch(seqs: &[&[u32]]) -> Array2<u32> {
    let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0).max(1);
    let mut out = Array2::from_elem((seqs.len(), width), PAD);
    for (mut row, s) in out.outer_iter_mut().zip(seqs) {
        row.iter_mut().zip(s.iter()).for_each(|(d, &t)| *d = t);
    }
    out
}

/// A labeled dataset to be indexed, with the text of each of its classes.
#[derive(Clone, Copy, Debug)]
pub struct Source<'a> {
    pub tag: &'a str,
    pub data: &'a Dataset,
    pub names: &'a [String],
}

/// Frozen key encoder, static index, text store and frozen vocabulary.
#[derive(Debug)]
pub struct RetrievalModule {
    pub encoder: FrozenEncoder,
    pub index: Index,
    pub store: TextStore,
    pub tokenizer: Tokenizer,
}

impl RetrievalModule {
    /// The vocabulary is grown over the store's texts in entry order and
    /// frozen.
    pub fn new(encoder: FrozenEncoder, index: Index, store: TextStore) -> Result<Self> {
        if encoder.output_dim() != index.dim() {
            return Err(RacError::DimensionMismatch {
                expected: index.dim(),
                got: encoder.output_dim(),
            });
        }
        for &id in index.store().ids() {
            store.get(id)?;
        }
        let tokenizer = Tokenizer::fit(store.entries().iter().map(|e| e.text.as_str()), MAX_TOKENS);
        Ok(RetrievalModule {
            encoder,
            index,
            store,
            tokenizer,
        })
    }

    /// Encodes and indexes every source in order. Record ids run on from
    /// source to source; the ids of each source are returned alongside.
    pub fn build(encoder: FrozenEncoder, spec: &IndexSpec, sources: &[Source<'_>]) -> Result<(Self, Vec<Vec<u64>>)> {
        let mut keys: Option<KeyStore> = None;
        let mut store = TextStore::default();
        let mut ids = Vec::with_capacity(sources.len());
        let mut next = 0u64;
        for src in sources {
            if store.sources().iter().any(|(t, _)| t == src.tag) {
                return Err(RacError::config(format!("duplicate source tag `{}`", src.tag)));
            }
            let part = encode_keys(&encoder, src.data, next)?;
            store.extend_labels(next, src.tag, &src.data.labels(), src.names)?;
            ids.push(part.ids().to_vec());
            next += src.data.len() as u64;
            match &mut keys {
                Some(k) => k.extend(&part)?,
                None => keys = Some(part),
            }
        }
        let keys = keys.ok_or_else(|| RacError::config("index needs at least one source"))?;
        let index = spec.build(keys)?;
        Ok((RetrievalModule::new(encoder, index, store)?, ids))
    }

    /// Neighbors of one sample. With `in_index` set (a training query whose
    /// own record is indexed) and drop-first on, `k + 1` are fetched and one
    /// is dropped.
    pub fn lookup(&self, x: &[f64], in_index: Option<u64>, cfg: &RetrievalConfig) -> Result<Neighbors> {
        let k = cfg.k;
        if k < 1 {
            return Err(RacError::config("k must be >= 1"));
        }
        let q = self.encoder.encode(x)?;
        if cfg.drop_first && in_index.is_some() {
            if k + 1 > self.index.len() {
                return Err(RacError::config(format!(
                    "k + 1 = {} exceeds the {} indexed records",
                    k + 1,
                    self.index.len()
                )));
            }
            Ok(drop_first(self.index.query(&q, k + 1)?, in_index, k))
        } else {
            self.index.query(&q, k)
        }
    }

    pub fn tokens(&self, x: &[f64], in_index: Option<u64>, cfg: &RetrievalConfig) -> Result<Vec<u32>> {
        assemble_text(&self.lookup(x, in_index, cfg)?, &self.store, &self.tokenizer)
    }

    /// Token sequences for many samples; output order matches input order.
    pub fn tokens_batch(&self, xs: &[&[f64]], in_index: &[Option<u64>], cfg: &RetrievalConfig) -> Result<Vec<Vec<u32>>> {
        if xs.len() != in_index.len() {
            return Err(RacError::input("one index flag per query"));
        }
        xs.par_iter()
            .zip(in_index.par_iter())
            .map(|(x, &id)| self.tokens(x, id, cfg))
            .collect()
    }
}
