//! Index file format.
//!
//! ```text
//! RACIDX1\n
//! kind <exact|hnsw>\n
//! metric <l2|cosine>\n
//! d <dim>\n
//! J <count>\n
//! M <m>\n
//! ef_construction <ef>\n
//! seed <seed>\n
//! J*d little-endian f32 keys (already normalized for cosine)
//! J little-endian u64 record ids
//! hnsw only, per node: u32 level, then for layers 0..=level a u64 length
//! followed by that many u64 neighbor positions
//! ```
//!
//! `M`, `ef_construction` and `seed` are written as 0 for exact indexes.
//! The query beam width is a search-time setting and is not stored.

use std::fs;
use std::path::Path;

use super::{ExactIndex, HnswIndex, HnswParams, Index, IndexKind, KeyStore, Metric};
use crate::error::{RacError, Result};

const MAGIC: &[u8] = b"RACIDX1\n";
const FIELDS: [&str; 7] = ["kind", "metric", "d", "J", "M", "ef_construction", "seed"];

pub fn save_index(index: &Index, path: &Path) -> Result<()> {
    fs::write(path, encode(index)).map_err(|e| RacError::io(path, e))
}

pub fn load_index(path: &Path) -> Result<Index> {
    let bytes = fs::read(path).map_err(|e| RacError::io(path, e))?;
    decode(&bytes)
}

pub(crate) fn encode(index: &Index) -> Vec<u8> {
    let store = index.store();
    let (m, ef_c, seed) = match index {
        Index::Exact(_) => (0, 0, 0),
        Index::Hnsw(h) => (h.params().m, h.params().ef_construction, h.params().seed),
    };
    let values = [
        index.kind().as_str().to_owned(),
        index.metric().as_str().to_owned(),
        store.dim().to_string(),
        store.len().to_string(),
        m.to_string(),
        ef_c.to_string(),
        seed.to_string(),
    ];
    let mut out = Vec::with_capacity(64 + store.raw_keys().len() * 4 + store.len() * 8);
    out.extend_from_slice(MAGIC);
    for (name, value) in FIELDS.iter().zip(&values) {
        out.extend_from_slice(format!("{name} {value}\n").as_bytes());
    }
    for v in store.raw_keys() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for id in store.ids() {
        out.extend_from_slice(&id.to_le_bytes());
    }
    if let Index::Hnsw(h) = index {
        for (node, &level) in h.levels().iter().enumerate() {
            out.extend_from_slice(&(level as u32).to_le_bytes());
            for layer in 0..=level as usize {
                let nbrs = h.neighbors(node, layer);
                out.extend_from_slice(&(nbrs.len() as u64).to_le_bytes());
                for &nb in nbrs {
                    out.extend_from_slice(&(nb as u64).to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| RacError::format("index file", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| RacError::format("index header", "truncated"))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| RacError::format("index header", "not utf-8"))?;
        self.pos += nl + 1;
        Ok(line)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Index> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        if bytes.starts_with(b"RACIDX") {
            return Err(RacError::format("index file", "unsupported version"));
        }
        return Err(RacError::format("index file", "bad magic"));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let mut values = Vec::with_capacity(FIELDS.len());
    for name in FIELDS {
        let line = r.line()?;
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| RacError::format("index header", format!("bad line `{line}`")))?;
        if key != name {
            return Err(RacError::format(
                "index header",
                format!("expected field `{name}`, found `{key}`"),
            ));
        }
        values.push(value);
    }
    let kind: IndexKind = values[0]
        .parse()
        .map_err(|_| RacError::format("index header", format!("bad kind `{}`", values[0])))?;
    let metric: Metric = values[1]
        .parse()
        .map_err(|_| RacError::format("index header", format!("bad metric `{}`", values[1])))?;
    let num = |i: usize| -> Result<u64> {
        values[i].parse().map_err(|_| {
            RacError::format("index header", format!("bad {} `{}`", FIELDS[i], values[i]))
        })
    };
    let dim = num(2)? as usize;
    let n = num(3)? as usize;
    let m = num(4)? as usize;
    let ef_construction = num(5)? as usize;
    let seed = num(6)?;
    if dim == 0 || n == 0 {
        return Err(RacError::format("index header", "empty index"));
    }

    let raw = r.take(
        n.checked_mul(dim)
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| RacError::format("index header", "size overflow"))?,
    )?;
    let keys: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let ids = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let store = KeyStore::new(dim, keys, ids)
        .map_err(|e| RacError::format("index file", e.to_string()))?;

    let index = match kind {
        IndexKind::Exact => Index::Exact(ExactIndex::from_parts(store, metric)),
        IndexKind::Hnsw => {
            let mut levels = Vec::with_capacity(n);
            let mut links = Vec::with_capacity(n);
            for _ in 0..n {
                let level = r.u32()?;
                if level > u8::MAX as u32 {
                    return Err(RacError::format("index graph", "level out of range"));
                }
                let mut layers = Vec::with_capacity(level as usize + 1);
                for _ in 0..=level {
                    let len = r.u64()? as usize;
                    if len > n {
                        return Err(RacError::format("index graph", "adjacency too long"));
                    }
                    let adj = (0..len)
                        .map(|_| {
                            let v = r.u64()?;
                            u32::try_from(v)
                                .map_err(|_| RacError::format("index graph", "neighbor id overflow"))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    layers.push(adj);
                }
                levels.push(level as u8);
                links.push(layers);
            }
            let params = HnswParams {
                m,
                ef_construction,
                ef_search: None,
                level_lambda: None,
                seed,
            };
            Index::Hnsw(HnswIndex::from_parts(store, metric, params, levels, links)?)
        }
    };
    if r.pos != bytes.len() {
        return Err(RacError::format("index file", "trailing bytes"));
    }
    Ok(index)
}
