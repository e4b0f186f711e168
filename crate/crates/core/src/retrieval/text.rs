use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{RacError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextEntry {
    pub id: u64,
    /// Which dataset contributed the entry.
    pub source: String,
    pub text: String,
}

/// Label text of every indexed record, addressable by record id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TextStore {
    entries: Vec<TextEntry>,
    by_id: HashMap<u64, usize>,
}

impl TextStore {
    pub fn new(entries: Vec<TextEntry>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(entries.len());
        for (pos, e) in entries.iter().enumerate() {
            if e.source.contains(['\t', '\n']) || e.text.contains(['\t', '\n']) {
                return Err(RacError::input(format!("entry {} contains a tab or newline", e.id)));
            }
            if by_id.insert(e.id, pos).is_some() {
                return Err(RacError::input(format!("duplicate text id {}", e.id)));
            }
        }
        Ok(TextStore { entries, by_id })
    }

    /// Appends one entry per label, ids continuing from `first_id`.
    pub fn extend_labels(&mut self, first_id: u64, source: &str, labels: &[usize], names: &[String]) -> Result<()> {
        let mut entries = std::mem::take(&mut self.entries);
        for (i, &y) in labels.iter().enumerate() {
            let text = names
                .get(y)
                .ok_or_else(|| RacError::input(format!("no label text for class {y} of `{source}`")))?;
            entries.push(TextEntry {
                id: first_id + i as u64,
                source: source.to_owned(),
                text: text.clone(),
            });
        }
        *self = TextStore::new(entries)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TextEntry] {
        &self.entries
    }

    pub fn get(&self, id: u64) -> Result<&TextEntry> {
        self.by_id
            .get(&id)
            .map(|&pos| &self.entries[pos])
            .ok_or_else(|| RacError::input(format!("no text stored for id {id}")))
    }

    pub fn text(&self, id: u64) -> Result<&str> {
        self.get(id).map(|e| e.text.as_str())
    }

    /// Ids contributed by `source`, in insertion order.
    pub fn ids_with_source(&self, source: &str) -> Vec<u64> {
        self.entries.iter().filter(|e| e.source == source).map(|e| e.id).collect()
    }

    pub fn sources(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for e in &self.entries {
            match out.iter_mut().find(|(s, _)| *s == e.source) {
                Some((_, n)) => *n += 1,
                None => out.push((e.source.clone(), 1)),
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.id, e.source, e.text));
        }
        fs::write(path, out).map_err(|e| RacError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| RacError::io(path, e))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.splitn(3, '\t');
            let (Some(id), Some(source), Some(label)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(RacError::format("text store", format!("line {}: expected 3 fields", lineno + 1)));
            };
            let id = id
                .parse()
                .map_err(|_| RacError::format("text store", format!("line {}: bad id `{id}`", lineno + 1)))?;
            entries.push(TextEntry {
                id,
                source: source.to_owned(),
                text: label.to_owned(),
            });
        }
        TextStore::new(entries).map_err(|e| RacError::format("text store", e.to_string()))
    }
}
