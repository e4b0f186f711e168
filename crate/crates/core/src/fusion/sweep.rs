use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train, EvalReport, HistoryRecord, TrainConfig, TrainData};
use crate::ann::IndexSpec;
use crate::dataspace::Dataset;
use crate::error::{RacError, Result};
use crate::retrieval::{FixedEmbeddings, FrozenEncoder, RetrievalModule, Source, TextVariant};

/// Tag of the training set inside an index.
pub const TRAIN_TAG: &str = "train";
pub const AUX_TAG: &str = "aux";

/// A labeled pool of extra data with its own class names.
#[derive(Clone, Debug)]
pub struct AuxPool {
    pub data: Dataset,
    pub names: Vec<String>,
}

/// What goes into the index for one run.
#[derive(Clone, Debug, PartialEq)]
pub enum IndexContent {
    Train,
    /// The training set plus the given auxiliary samples.
    TrainAndAux(Vec<usize>),
    /// Only the given auxiliary samples.
    Aux(Vec<usize>),
}

/// Fixed data and retrieval plumbing shared by the runs of a sweep.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub train: Dataset,
    pub test: Dataset,
    pub names: Vec<String>,
    pub aux: Option<AuxPool>,
    pub encoder: FrozenEncoder,
    pub index: IndexSpec,
    pub fixed: Option<FixedEmbeddings>,
}

#[derive(Debug)]
pub struct RunResult {
    pub report: EvalReport,
    pub history: Vec<HistoryRecord>,
    pub index_size: usize,
    pub index_build_seconds: f64,
    pub epoch_seconds: Vec<f64>,
    /// Whole run: index build, lookups and training.
    pub total_seconds: f64,
}

impl RunResult {
    pub fn mean_epoch_seconds(&self) -> f64 {
        self.epoch_seconds.iter().sum::<f64>() / self.epoch_seconds.len() as f64
    }
}

impl Experiment {
    fn aux(&self) -> Result<&AuxPool> {
        self.aux
            .as_ref()
            .ok_or_else(|| RacError::config("this run needs an auxiliary pool"))
    }

    /// Builds the retrieval module for `content`. The second value holds the
    /// record ids of the training samples when they are indexed.
    pub fn retrieval(&self, content: &IndexContent) -> Result<(RetrievalModule, Option<Vec<u64>>)> {
        let aux_subset = match content {
            IndexContent::Train => None,
            IndexContent::TrainAndAux(rows) | IndexContent::Aux(rows) => {
                if rows.is_empty() && matches!(content, IndexContent::Aux(_)) {
                    return Err(RacError::config("index content is empty"));
                }
                Some(self.aux()?.data.subset(rows)?)
            }
        };
        let mut sources = Vec::new();
        if !matches!(content, IndexContent::Aux(_)) {
            sources.push(Source {
                tag: TRAIN_TAG,
                data: &self.train,
                names: &self.names,
            });
        }
        if let Some(sub) = aux_subset.as_ref().filter(|s| !s.is_empty()) {
            sources.push(Source {
                tag: AUX_TAG,
                data: sub,
                names: &self.aux()?.names,
            });
        }
        let (module, ids) = RetrievalModule::build(self.encoder.clone(), &self.index, &sources)?;
        let train_ids = (!matches!(content, IndexContent::Aux(_))).then(|| ids[0].clone());
        Ok((module, train_ids))
    }

    pub fn run(&self, cfg: &TrainConfig, content: &IndexContent) -> Result<RunResult> {
        let start = Instant::now();
        let (module, train_ids, build_seconds) = if cfg.use_ret {
            let t = Instant::now();
            let (m, ids) = self.retrieval(content)?;
            (Some(m), ids, t.elapsed().as_secs_f64())
        } else {
            (None, None, 0.0)
        };
        let data = TrainData {
            train: &self.train,
            test: Some(&self.test),
            retrieval: module.as_ref(),
            train_ids: train_ids.as_deref(),
            fixed: self.fixed.as_ref(),
        };
        let out = train(&data, cfg)?;
        Ok(RunResult {
            report: out.final_eval.expect("test set evaluated"),
            history: out.history,
            index_size: module.as_ref().map_or(0, |m| m.index.len()),
            index_build_seconds: build_seconds,
            epoch_seconds: out.epoch_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// A header row plus data rows, written as comma-separated text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|s| s.as_ref().to_owned()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Column `name` of row `i` as a number.
    pub fn value(&self, i: usize, name: &str) -> Option<f64> {
        let c = self.header.iter().position(|h| h == name)?;
        self.rows.get(i)?.get(c)?.parse().ok()
    }

    /// `comments` become leading `# ` lines.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            for line in c.lines() {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
        }
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn metric_cells(report: &EvalReport) -> Vec<String> {
    let m = report.primary();
    vec![
        format!("{}", m.top1),
        opt(m.buckets.many),
        opt(m.buckets.med),
        opt(m.buckets.few),
        opt(m.buckets.all),
        format!("{}", m.balanced_error),
    ]
}

const METRIC_COLUMNS: [&str; 6] = ["top1", "many", "med", "few", "all", "be"];

fn header(lead: &[&str], tail: &[&str]) -> Vec<String> {
    lead.iter()
        .chain(METRIC_COLUMNS.iter())
        .chain(tail.iter())
        .map(|s| s.to_string())
        .collect()
}

/// Retrieval-only runs over `k_values`, same seed, training set indexed.
pub fn sweep_k(exp: &Experiment, cfg: &TrainConfig, k_values: &[usize]) -> Result<Table> {
    let mut table = Table::new(&header(&["k"], &["seconds"]));
    for &k in k_values {
        let mut c = cfg.clone();
        c.use_base = false;
        c.use_ret = true;
        c.retrieval.k = k;
        let r = exp.run(&c, &IndexContent::Train)?;
        let mut row = vec![k.to_string()];
        row.extend(metric_cells(&r.report));
        row.push(format!("{}", r.total_seconds));
        table.push(row);
    }
    Ok(table)
}

/// One run per temperature, branches as configured.
pub fn sweep_tau(exp: &Experiment, cfg: &TrainConfig, tau_values: &[f64]) -> Result<Table> {
    let mut table = Table::new(&header(&["tau"], &[]));
    for &tau in tau_values {
        let c = TrainConfig { tau, ..cfg.clone() };
        let r = exp.run(&c, &IndexContent::Train)?;
        let mut row = vec![format!("{tau}")];
        row.extend(metric_cells(&r.report));
        table.push(row);
    }
    Ok(table)
}

/// One grid point of an index-content ablation over the auxiliary pool.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum IndexAblation {
    /// A seeded random fraction of the whole pool.
    Fraction(f64),
    /// Every class, at most this many samples each.
    PerClassCap(usize),
    /// The first classes of the pool, all their samples.
    ClassCount(usize),
    /// The first `classes` classes, first `per_class` samples of each.
    Subset { classes: usize, per_class: usize },
}

impl IndexAblation {
    pub fn mode(&self) -> &'static str {
        match self {
            IndexAblation::Fraction(_) => "fraction",
            IndexAblation::PerClassCap(_) => "per_class",
            IndexAblation::ClassCount(_) => "classes",
            IndexAblation::Subset { .. } => "subset",
        }
    }

    pub fn value(&self) -> String {
        match self {
            IndexAblation::Fraction(f) => format!("{f}"),
            IndexAblation::PerClassCap(c) => c.to_string(),
            IndexAblation::ClassCount(c) => c.to_string(),
            IndexAblation::Subset { classes, per_class } => format!("{classes}x{per_class}"),
        }
    }

    /// Rows of `pool` selected by this grid point, ascending.
    pub fn rows(&self, pool: &Dataset, seed: u64) -> Result<Vec<usize>> {
        let by_class = |classes: usize, cap: usize| -> Result<Vec<usize>> {
            if classes > pool.classes() {
                return Err(RacError::config(format!(
                    "{classes} classes requested, pool has {}",
                    pool.classes()
                )));
            }
            let mut taken = vec![0usize; pool.classes()];
            let mut rows = Vec::new();
            for (i, s) in pool.samples().iter().enumerate() {
                if s.label < classes && taken[s.label] < cap {
                    taken[s.label] += 1;
                    rows.push(i);
                }
            }
            if taken[..classes].iter().any(|&t| t < cap) {
                return Err(RacError::config(format!("pool has fewer than {cap} samples in some class")));
            }
            Ok(rows)
        };
        let rows = match *self {
            IndexAblation::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(RacError::config(format!("fraction {f} outside (0, 1]")));
                }
                let n = ((pool.len() as f64) * f).round() as usize;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut rows = sample(&mut rng, pool.len(), n).into_vec();
                rows.sort_unstable();
                rows
            }
            IndexAblation::PerClassCap(cap) => {
                let smallest = (0..pool.classes())
                    .map(|c| pool.samples().iter().filter(|s| s.label == c).count())
                    .min()
                    .unwrap_or(0);
                if cap > smallest {
                    return Err(RacError::config(format!("cap {cap} exceeds the smallest pool class ({smallest})")));
                }
                by_class(pool.classes(), cap)?
            }
            IndexAblation::ClassCount(c) => {
                let rows: Vec<usize> = (0..pool.len()).filter(|&i| pool.samples()[i].label < c).collect();
                if c > pool.classes() {
                    return Err(RacError::config(format!("{c} classes requested, pool has {}", pool.classes())));
                }
                rows
            }
            IndexAblation::Subset { classes, per_class } => by_class(classes, per_class)?,
        };
        if rows.is_empty() {
            return Err(RacError::config("ablation leaves the index empty"));
        }
        Ok(rows)
    }
}

/// Retrieval-only runs with an index holding only auxiliary data, rebuilt
/// per grid point.
pub fn ablate_index_content(exp: &Experiment, cfg: &TrainConfig, grid: &[IndexAblation]) -> Result<Table> {
    let pool = &exp.aux()?.data;
    let mut table = Table::new(&header(&["mode", "value", "index_size"], &[]));
    for point in grid {
        let rows = point.rows(pool, cfg.seed)?;
        let mut c = cfg.clone();
        c.use_base = false;
        c.use_ret = true;
        let r = exp.run(&c, &IndexContent::Aux(rows))?;
        let mut row = vec![point.mode().to_string(), point.value(), r.index_size.to_string()];
        row.extend(metric_cells(&r.report));
        table.push(row);
    }
    Ok(table)
}

/// One configuration timed by [`runtime_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct RuntimeVariant {
    pub index_data: String,
    pub content: IndexContent,
    /// `None` for a base-only run.
    pub text: Option<TextVariant>,
}

/// Seconds per epoch for each variant, lookups counted in every epoch.
pub fn runtime_report(exp: &Experiment, cfg: &TrainConfig, variants: &[RuntimeVariant]) -> Result<Table> {
    if variants.len() < 2 {
        return Err(RacError::config("runtime report needs at least two variants"));
    }
    let mut table = Table::new(&["index_data", "index_size", "text_encoder", "seconds_per_epoch"]);
    for v in variants {
        let mut c = cfg.clone();
        c.cache_retrievals = false;
        c.use_base = true;
        c.use_ret = v.text.is_some();
        if let Some(variant) = v.text {
            c.text = crate::retrieval::TextEncoderSpec {
                variant,
                embed_dim: variant.default_dim(),
                ..c.text
            };
        }
        let r = exp.run(&c, &v.content)?;
        table.push(vec![
            v.index_data.clone(),
            r.index_size.to_string(),
            v.text.map_or("none", |t| t.as_str()).to_string(),
            format!("{}", r.mean_epoch_seconds()),
        ]);
    }
    Ok(table)
}
