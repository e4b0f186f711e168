//! LTDS text format.
//!
//! ```text
//! LTDS 1 <L> <D> <N>
//! <label> <v_1> ... <v_D>      (N lines)
//! ```
//!
//! Floats are written in shortest round-trip form so that export followed
//! by ingest reproduces the dataset bit for bit. Class names live in an
//! optional companion file `<path>.names`, one name per line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Sample, Split};
use crate::error::{RacError, Result};

const MAGIC: &str = "LTDS";
const VERSION: u32 = 1;

pub fn write_ltds(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(dataset.len() * (dataset.dim() + 1) * 12);
    let _ = writeln!(
        out,
        "{MAGIC} {VERSION} {} {} {}",
        dataset.classes(),
        dataset.dim(),
        dataset.len()
    );
    for s in dataset.samples() {
        let _ = write!(out, "{}", s.label);
        for v in &s.features {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| RacError::io(path, e))
}

pub fn read_ltds(path: &Path, split: Split) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| RacError::io(path, e))?;
    parse_ltds(&text, split)
}

fn parse_ltds(text: &str, split: Split) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| RacError::format("LTDS header", "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != MAGIC {
        return Err(RacError::format(
            "LTDS header",
            format!("expected `LTDS <version> <L> <D> <N>`, got `{header}`"),
        ));
    }
    let parse_field = |i: usize, name: &str| -> Result<usize> {
        fields[i].parse().map_err(|_| {
            RacError::format("LTDS header", format!("bad {name} field `{}`", fields[i]))
        })
    };
    let version = parse_field(1, "version")?;
    if version != VERSION as usize {
        return Err(RacError::format(
            "LTDS header",
            format!("unsupported version {version}"),
        ));
    }
    let classes = parse_field(2, "class count")?;
    let dim = parse_field(3, "dimension")?;
    let n = parse_field(4, "sample count")?;

    let mut samples = Vec::with_capacity(n);
    for (lineno, line) in lines {
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line");
        let label: usize = label_tok.parse().map_err(|_| {
            RacError::format("LTDS row", format!("line {}: bad label `{label_tok}`", lineno + 1))
        })?;
        if label >= classes {
            return Err(RacError::format(
                "LTDS row",
                format!("line {}: label {label} >= class count {classes}", lineno + 1),
            ));
        }
        let features = tokens
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    RacError::format("LTDS row", format!("line {}: bad value `{t}`", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if features.len() != dim {
            return Err(RacError::format(
                "LTDS row",
                format!(
                    "line {}: {} values, header declares dimension {dim}",
                    lineno + 1,
                    features.len()
                ),
            ));
        }
        samples.push(Sample { features, label });
    }
    if samples.len() != n {
        return Err(RacError::format(
            "LTDS body",
            format!("header declares {n} rows, found {}", samples.len()),
        ));
    }
    Dataset::new(samples, classes, dim, split)
}

pub fn names_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".names");
    PathBuf::from(p)
}

pub fn write_names(names: &[String], dataset_path: &Path) -> Result<()> {
    let path = names_path(dataset_path);
    let mut out = names.join("\n");
    out.push('\n');
    fs::write(&path, out).map_err(|e| RacError::io(path, e))
}

/// Reads `<dataset_path>.names`; `Ok(None)` when the companion file is absent.
pub fn read_names(dataset_path: &Path) -> Result<Option<Vec<String>>> {
    let path = names_path(dataset_path);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| RacError::io(&path, e))?;
    Ok(Some(text.lines().map(|l| l.trim().to_owned()).collect()))
}
