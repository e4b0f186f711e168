use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use rac_core::ann::{bench_index, build_exact, recall_at_k, BenchReport, Index, IndexKind};
use rac_core::dataspace::{
    bucketize, class_frequencies, generate_auxiliary, generate_longtail, make_balanced_testset, write_ltds,
    write_names, ClassStats, Dataset, LabelVocab, Split, VocabMode,
};
use rac_core::fusion::{
    ablate_index_content, evaluate, sweep_k, sweep_tau, train, AuxPool, EvalReport, Experiment, HistoryRecord,
    IndexAblation, Table, TrainData,
};
use rac_core::losses::{bucket_accuracy, per_class_accuracy, Branch};
use rac_core::retrieval::{
    encode_keys, inspect_retrievals, knn_classify, FixedEmbeddings, FrozenEncoder, RetrievalModule, Source,
};
use rac_core::{RacError, Result};

use crate::opts::{
    AblateArgs, BenchArgs, BuildIndexArgs, EvalArgs, GenDataArgs, IndexOpts, InspectArgs, KnnArgs, SweepArgs,
    TrainArgs,
};
use crate::store::{
    dataset_names, load_model, load_retrieval, read_dataset, read_model_manifest, save_model, save_retrieval,
    write_json, write_text, ModelManifest, RetrievalManifest, SourceRecord,
};

/// Where a command writes, and the resolved config echoed into its tables.
pub struct Ctx {
    pub out: PathBuf,
    pub config: String,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_table(&self, name: &str, table: &Table) -> Result<()> {
        write_text(&self.path(name), &table.to_csv(&[self.config.clone()]))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

pub fn gen_data(ctx: &Ctx, a: &GenDataArgs) -> Result<()> {
    let config = a.gen_config()?;
    let mode = match (&a.names_file, a.vocab.as_str()) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| RacError::io(path, e))?;
            VocabMode::Custom(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
        }
        (None, "multi-token") => VocabMode::MultiToken { seed: a.seed },
        (None, "single-token") => VocabMode::SingleToken,
        (None, other) => return Err(RacError::config(format!("unknown vocabulary `{other}`"))),
    };
    let names = LabelVocab::new(&mode, a.classes)?.names().to_vec();
    let train = generate_longtail(&config)?;
    let test = make_balanced_testset(&config, a.test_per_class)?;
    for (file, data) in [("train.ltds", &train), ("test.ltds", &test)] {
        write_ltds(data, &ctx.path(file))?;
        write_names(&names, &ctx.path(file))?;
    }
    if a.aux_classes > 0 {
        let aux = generate_auxiliary(&config, &a.aux_config())?;
        let aux_names = LabelVocab::new(&VocabMode::MultiToken { seed: a.seed.wrapping_add(1) }, a.aux_classes)?;
        write_ltds(&aux, &ctx.path("aux.ltds"))?;
        write_names(aux_names.names(), &ctx.path("aux.ltds"))?;
        println!("aux: {} samples in {} classes", aux.len(), a.aux_classes);
    }

    let stats = class_frequencies(&train);
    let buckets = bucketize(&stats)?;
    let mut table = Table::new(&["class_id", "count", "bucket", "name"]);
    for (c, (&n, b)) in stats.counts.iter().zip(&buckets).enumerate() {
        table.push(vec![c.to_string(), n.to_string(), b.as_str().to_string(), names[c].clone()]);
    }
    ctx.write_table("class_counts.csv", &table)?;
    println!("train: N = {} over L = {} classes, D = {}", stats.total, a.classes, a.dim);
    for (c, (&n, b)) in stats.counts.iter().zip(&buckets).enumerate() {
        println!("  {c:>4} {n:>7} {:<5} {}", b.as_str(), names[c]);
    }
    println!("test: {} samples, {} per class", test.len(), a.test_per_class);
    Ok(())
}

fn parse_sources(add: &[String]) -> Vec<(String, PathBuf)> {
    let mut aux = 0;
    add.iter()
        .enumerate()
        .map(|(i, s)| match s.split_once('=') {
            Some((tag, path)) => (tag.to_string(), PathBuf::from(path)),
            None => {
                let tag = if i == 0 {
                    "train".to_string()
                } else {
                    aux += 1;
                    if aux == 1 { "aux".to_string() } else { format!("aux{aux}") }
                };
                (tag, PathBuf::from(s))
            }
        })
        .collect()
}

pub fn build_index(ctx: &Ctx, a: &BuildIndexArgs) -> Result<()> {
    let sources = parse_sources(&a.add);
    let mut loaded = Vec::with_capacity(sources.len());
    for (tag, path) in &sources {
        let data = read_dataset(path, Split::Train)?;
        let names = dataset_names(path, data.classes())?;
        loaded.push((tag.as_str(), path, data, names));
    }
    let dim = loaded[0].2.dim();
    if let Some((_, path, data, _)) = loaded.iter().find(|s| s.2.dim() != dim) {
        eprintln!("{}: dimension {} differs from the first source", path.display(), data.dim());
        return Err(RacError::DimensionMismatch { expected: dim, got: data.dim() });
    }
    let spec = a.index.index_spec()?;
    let encoder = FrozenEncoder::from_spec(a.index.encoder_spec(dim)?)?;
    let srcs: Vec<Source<'_>> = loaded
        .iter()
        .map(|(tag, _, data, names)| Source { tag, data, names })
        .collect();
    let start = Instant::now();
    let (module, ids) = RetrievalModule::build(encoder.clone(), &spec, &srcs)?;
    let seconds = start.elapsed().as_secs_f64();
    let manifest = RetrievalManifest {
        encoder: encoder.spec().clone(),
        index: spec,
        sources: loaded
            .iter()
            .zip(&ids)
            .map(|((tag, path, data, _), ids)| SourceRecord {
                tag: tag.to_string(),
                path: absolute(path),
                first_id: ids[0],
                records: data.len(),
            })
            .collect(),
    };
    save_retrieval(&ctx.out, &module, &manifest)?;
    let j = module.index.len();
    let per_key = module.index.build_seconds().unwrap_or(seconds) / j as f64;
    println!("J = {j}");
    for s in &manifest.sources {
        println!("  {:<8} {:>8} records from {}", s.tag, s.records, s.path.display());
    }
    println!("build time per key: {per_key:.3e} s");
    Ok(())
}

fn history_table(history: &[HistoryRecord]) -> Table {
    let mut t = Table::new(&["epoch", "split", "loss", "top1", "top5", "be", "many", "med", "few"]);
    for h in history {
        t.push(vec![
            h.epoch.to_string(),
            h.split.clone(),
            format!("{}", h.loss),
            format!("{}", h.top1),
            format!("{}", h.top5),
            format!("{}", h.be),
            opt(h.many),
            opt(h.med),
            opt(h.few),
        ]);
    }
    t
}

fn metrics_table(report: &EvalReport) -> Table {
    let mut t = Table::new(&["branch", "top1", "top5", "be", "many", "med", "few", "all"]);
    for b in Branch::ALL {
        if let Some(m) = report.branch(b) {
            t.push(vec![
                b.as_str().to_string(),
                format!("{}", m.top1),
                format!("{}", m.top5),
                format!("{}", m.balanced_error),
                opt(m.buckets.many),
                opt(m.buckets.med),
                opt(m.buckets.few),
                opt(m.buckets.all),
            ]);
        }
    }
    t
}

fn write_report(ctx: &Ctx, prefix: &str, report: &EvalReport) -> Result<()> {
    write_json(&ctx.path(&format!("{prefix}_report.json")), report)?;
    write_text(&ctx.path(&format!("{prefix}_per_class.csv")), &report.per_class_csv())?;
    write_text(&ctx.path(&format!("{prefix}_moving_average.csv")), &report.moving_average_csv())?;
    ctx.write_table(&format!("{prefix}_metrics.csv"), &metrics_table(report))
}

fn print_report(report: &EvalReport) {
    for b in Branch::ALL {
        if let Some(m) = report.branch(b) {
            println!(
                "  {:<6} top1 {:.4}  be {:.4}  many {}  med {}  few {}",
                b.as_str(),
                m.top1,
                m.balanced_error,
                m.buckets.many.map_or("-".into(), |v| format!("{v:.4}")),
                m.buckets.med.map_or("-".into(), |v| format!("{v:.4}")),
                m.buckets.few.map_or("-".into(), |v| format!("{v:.4}")),
            );
        }
    }
}

#[derive(Serialize)]
struct Timing<'a> {
    epoch_seconds: &'a [f64],
    cache_seconds: f64,
    index_build_seconds: Option<f64>,
}

pub fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let cfg = a.opts.train_config()?;
    let train_set = read_dataset(&a.train, Split::Train)?;
    let test = a.test.as_deref().map(|p| read_dataset(p, Split::Test)).transpose()?;
    let fixed = a.opts.fixed_embeddings.as_deref().map(FixedEmbeddings::read).transpose()?;

    let mut built_seconds = None;
    let (module, train_ids, index_dir) = if !cfg.use_ret {
        (None, None, None)
    } else if let Some(dir) = &a.index_dir {
        let (module, _) = load_retrieval(dir)?;
        let ids = module.store.ids_with_source(&a.train_tag);
        let ids = match ids.len() {
            0 => None,
            n if n == train_set.len() => Some(ids),
            n => {
                return Err(RacError::input(format!(
                    "index source `{}` has {n} records, the training set {}",
                    a.train_tag,
                    train_set.len()
                )))
            }
        };
        (Some(module), ids, Some(absolute(dir)))
    } else {
        let names = dataset_names(&a.train, train_set.classes())?;
        let encoder = FrozenEncoder::from_spec(a.index.encoder_spec(train_set.dim())?)?;
        let spec = a.index.index_spec()?;
        let src = Source { tag: "train", data: &train_set, names: &names };
        let start = Instant::now();
        let (module, ids) = RetrievalModule::build(encoder.clone(), &spec, &[src])?;
        built_seconds = Some(start.elapsed().as_secs_f64());
        let manifest = RetrievalManifest {
            encoder: encoder.spec().clone(),
            index: spec,
            sources: vec![SourceRecord {
                tag: "train".into(),
                path: absolute(&a.train),
                first_id: 0,
                records: train_set.len(),
            }],
        };
        save_retrieval(&ctx.out, &module, &manifest)?;
        let ids = ids.into_iter().next();
        (Some(module), ids, Some(absolute(&ctx.out)))
    };

    let data = TrainData {
        train: &train_set,
        test: test.as_ref(),
        retrieval: module.as_ref(),
        train_ids: train_ids.as_deref(),
        fixed: fixed.as_ref(),
    };
    let outcome = train(&data, &cfg)?;
    let manifest = ModelManifest {
        spec: outcome.model.spec.clone(),
        train: cfg,
        train_stats: class_frequencies(&train_set),
        vocabulary: module.as_ref().map(|m| m.tokenizer.words().to_vec()).unwrap_or_default(),
        index_dir,
        fixed_embeddings: a.opts.fixed_embeddings.as_deref().map(absolute),
    };
    save_model(&ctx.out, &outcome.model, Some(&outcome.optim), &manifest)?;
    ctx.write_table("history.csv", &history_table(&outcome.history))?;
    write_json(
        &ctx.path("timing.json"),
        &Timing {
            epoch_seconds: &outcome.epoch_seconds,
            cache_seconds: outcome.cache_seconds,
            index_build_seconds: built_seconds,
        },
    )?;
    let secs: f64 = outcome.epoch_seconds.iter().sum();
    println!("trained {} epochs in {secs:.2} s", outcome.epoch_seconds.len());
    if let Some(report) = &outcome.final_eval {
        write_report(ctx, "test", report)?;
        println!("test:");
        print_report(report);
    }
    Ok(())
}

pub fn eval_cmd(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let manifest = read_model_manifest(&a.model_dir)?;
    let module = if manifest.spec.use_ret {
        let dir = a
            .index_dir
            .as_ref()
            .or(manifest.index_dir.as_ref())
            .ok_or_else(|| RacError::config("no index recorded with the model; pass --index-dir"))?;
        Some(load_retrieval(dir)?.0)
    } else {
        None
    };
    let model = load_model(&a.model_dir, &manifest, module.as_ref().map(|m| &m.tokenizer))?;
    let data = read_dataset(&a.data, Split::Test)?;
    if data.dim() != manifest.spec.input_dim || data.classes() != manifest.spec.classes {
        return Err(RacError::DimensionMismatch {
            expected: manifest.spec.input_dim,
            got: data.dim(),
        });
    }
    let loss = manifest.train.loss_spec(&manifest.train_stats)?;
    let report = evaluate(
        &model,
        &data,
        module.as_ref(),
        &manifest.train.retrieval,
        &manifest.train_stats,
        &loss,
    )?;
    write_report(ctx, "eval", &report)?;
    println!("eval on {} samples:", data.len());
    print_report(&report);
    Ok(())
}

fn encode_all(encoder: &FrozenEncoder, data: &Dataset) -> Result<Vec<Vec<f32>>> {
    data.samples().iter().map(|s| encoder.encode(&s.features)).collect()
}

pub fn knn_baseline(ctx: &Ctx, a: &KnnArgs) -> Result<()> {
    let (module, _) = load_retrieval(&a.index_dir)?;
    let queries = read_dataset(&a.queries, Split::Test)?;
    let l = queries.classes();
    let names = dataset_names(&a.queries, l)?;
    // Records whose text is not a query class name vote for class `l`,
    // which is never right.
    let mut record_labels = vec![l; module.index.len()];
    let mut index_counts = vec![0usize; l];
    for e in module.store.entries() {
        let y = names.iter().position(|n| *n == e.text).unwrap_or(l);
        let slot = record_labels
            .get_mut(e.id as usize)
            .ok_or_else(|| RacError::input(format!("record id {} outside the index", e.id)))?;
        *slot = y;
        if y < l {
            index_counts[y] += 1;
        }
    }
    let stats = ClassStats::from_counts(index_counts);
    let buckets = bucketize(&stats)?;
    let keys = encode_all(&module.encoder, &queries)?;
    let labels = queries.labels();
    let mut table = Table::new(&["k", "top1", "many", "med", "few", "all", "be"]);
    for &k in &a.k {
        let preds = knn_classify(&module.index, &record_labels, &keys, k)?;
        let top1 = preds.iter().zip(&labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64;
        let mut per_class = per_class_accuracy(&preds, &labels, l + 1);
        per_class.truncate(l);
        let b = bucket_accuracy(&per_class, &buckets)?;
        let be = b.all.map(|acc| 1.0 - acc);
        println!("k = {k:>4}: top1 {top1:.4}  be {}", opt(be));
        table.push(vec![
            k.to_string(),
            format!("{top1}"),
            opt(b.many),
            opt(b.med),
            opt(b.few),
            opt(b.all),
            opt(be),
        ]);
    }
    ctx.write_table("knn.csv", &table)
}

fn experiment(train: &Path, test: &Path, index: &IndexOpts, fixed: Option<&Path>, aux: Option<&Path>) -> Result<Experiment> {
    let train_set = read_dataset(train, Split::Train)?;
    let test_set = read_dataset(test, Split::Test)?;
    let names = dataset_names(train, train_set.classes())?;
    let aux = aux
        .map(|p| -> Result<AuxPool> {
            let data = read_dataset(p, Split::Train)?;
            let names = dataset_names(p, data.classes())?;
            Ok(AuxPool { data, names })
        })
        .transpose()?;
    Ok(Experiment {
        encoder: FrozenEncoder::from_spec(index.encoder_spec(train_set.dim())?)?,
        index: index.index_spec()?,
        train: train_set,
        test: test_set,
        names,
        aux,
        fixed: fixed.map(FixedEmbeddings::read).transpose()?,
    })
}

pub fn sweep(ctx: &Ctx, a: &SweepArgs) -> Result<()> {
    let cfg = a.opts.train_config()?;
    let exp = experiment(&a.train, &a.test, &a.index, a.opts.fixed_embeddings.as_deref(), None)?;
    let table = match a.axis.as_str() {
        "k" => {
            let ks = a
                .values
                .iter()
                .map(|&v| {
                    if v >= 1.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(RacError::config(format!("k must be a positive integer, got {v}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            sweep_k(&exp, &cfg, &ks)?
        }
        "tau" => sweep_tau(&exp, &cfg, &a.values)?,
        other => return Err(RacError::config(format!("unknown sweep axis `{other}`"))),
    };
    print!("{}", table.to_csv(&[]));
    ctx.write_table(&format!("sweep_{}.csv", a.axis), &table)
}

fn ablation_point(mode: &str, value: &str) -> Result<IndexAblation> {
    let bad = || RacError::config(format!("bad {mode} value `{value}`"));
    let int = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    Ok(match mode {
        "fraction" => IndexAblation::Fraction(value.trim().parse().map_err(|_| bad())?),
        "per-class" => IndexAblation::PerClassCap(int(value)?),
        "classes" => IndexAblation::ClassCount(int(value)?),
        "subset" => {
            let (c, p) = value.split_once('x').ok_or_else(bad)?;
            IndexAblation::Subset {
                classes: int(c)?,
                per_class: int(p)?,
            }
        }
        other => return Err(RacError::config(format!("unknown ablation mode `{other}`"))),
    })
}

pub fn ablate_index(ctx: &Ctx, a: &AblateArgs) -> Result<()> {
    let cfg = a.opts.train_config()?;
    let grid = a
        .values
        .iter()
        .map(|v| ablation_point(&a.mode, v))
        .collect::<Result<Vec<_>>>()?;
    let exp = experiment(&a.train, &a.test, &a.index, a.opts.fixed_embeddings.as_deref(), Some(&a.aux))?;
    let table = ablate_index_content(&exp, &cfg, &grid)?;
    print!("{}", table.to_csv(&[]));
    ctx.write_table(&format!("ablate_{}.csv", a.mode), &table)
}

#[derive(Serialize)]
struct BenchOutput {
    kind: IndexKind,
    metric: rac_core::ann::Metric,
    records: usize,
    queries: usize,
    k: usize,
    recall: Option<f64>,
    report: BenchReport,
}

pub fn bench(ctx: &Ctx, a: &BenchArgs) -> Result<()> {
    let (index, encoder): (Index, FrozenEncoder) = match (&a.index_dir, &a.data) {
        (Some(dir), _) => {
            let (m, _) = load_retrieval(dir)?;
            (m.index, m.encoder)
        }
        (None, Some(path)) => {
            let data = read_dataset(path, Split::Train)?;
            let encoder = FrozenEncoder::from_spec(a.index.encoder_spec(data.dim())?)?;
            let keys = encode_keys(&encoder, &data, 0)?;
            (a.index.index_spec()?.build(keys)?, encoder)
        }
        (None, None) => return Err(RacError::config("pass --index-dir or --data")),
    };
    let queries = encode_all(&encoder, &read_dataset(&a.queries, Split::Test)?)?;
    let report = bench_index(&index, &queries, a.k, a.repeats)?;
    let recall = if a.recall && index.kind() == IndexKind::Hnsw {
        let exact = build_exact(index.store().clone(), index.metric())?;
        Some(recall_at_k(&index, &exact, &queries, a.k)?)
    } else {
        None
    };
    println!(
        "{} {} J = {}: mean {:.3e} s, p50 {:.3e} s, p95 {:.3e} s per query",
        index.kind().as_str(),
        index.metric().as_str(),
        index.len(),
        report.query.mean,
        report.query.p50,
        report.query.p95
    );
    if let Some(r) = recall {
        println!("recall@{} = {r:.4}", a.k);
    }
    let mut table = Table::new(&["kind", "metric", "records", "k", "recall", "mean_s", "p50_s", "p95_s", "build_s_per_key"]);
    table.push(vec![
        index.kind().as_str().into(),
        index.metric().as_str().into(),
        index.len().to_string(),
        a.k.to_string(),
        opt(recall),
        format!("{}", report.query.mean),
        format!("{}", report.query.p50),
        format!("{}", report.query.p95),
        opt(report.build_seconds_per_key),
    ]);
    ctx.write_table("bench.csv", &table)?;
    write_json(
        &ctx.path("bench.json"),
        &BenchOutput {
            kind: index.kind(),
            metric: index.metric(),
            records: index.len(),
            queries: queries.len(),
            k: a.k,
            recall,
            report,
        },
    )
}

pub fn inspect(ctx: &Ctx, a: &InspectArgs) -> Result<()> {
    let (module, _) = load_retrieval(&a.index_dir)?;
    let queries = read_dataset(&a.queries, Split::Test)?;
    let names = dataset_names(&a.queries, queries.classes())?;
    let records = inspect_retrievals(&module, &queries, &names, a.n, a.k)?;
    for r in &records {
        let top: Vec<String> = r.counts.iter().take(3).map(|c| format!("{} x{}", c.label, c.count)).collect();
        println!("query {} ({}): {}", r.query_id, r.true_label, top.join(", "));
    }
    write_json(&ctx.path("inspect.json"), &records)
}
