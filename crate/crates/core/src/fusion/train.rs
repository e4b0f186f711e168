use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{default_scale, EvalReport, ModelSpec, RacModel};
use crate::autodiff::{AdamW, OptimState, Optimizer};
use crate::dataspace::{class_frequencies, ClassStats, Dataset};
use crate::error::{RacError, Result};
use crate::losses::{adjusted_ce, balce_spec, lace_spec, ldam_spec, reweight, Branch, LossSpec, Reweight};
use crate::retrieval::{pad_batch, FixedEmbeddings, RetrievalConfig, RetrievalModule, TextEncoderSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Balce,
    Lace,
    Ldam,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Balce => "balce",
            LossKind::Lace => "lace",
            LossKind::Ldam => "ldam",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = RacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossKind::Ce),
            "balce" => Ok(LossKind::Balce),
            "lace" => Ok(LossKind::Lace),
            "ldam" => Ok(LossKind::Ldam),
            other => Err(RacError::config(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub reweight: Reweight,
    pub tau: f64,
    pub epsilon: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub retrieval: RetrievalConfig,
    pub use_base: bool,
    pub use_ret: bool,
    pub hidden: Option<usize>,
    pub text: TextEncoderSpec,
    /// `None` means `L / 2`.
    pub fusion_scale: Option<f64>,
    /// Evaluate on the test set every this many epochs; the last epoch is
    /// always evaluated. 0 evaluates only at the end.
    pub eval_every: usize,
    /// Look each training sample up once instead of once per epoch.
    pub cache_retrievals: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Lace,
            reweight: Reweight::None,
            tau: 1.0,
            epsilon: 0.1,
            optimizer: Optimizer::AdamW(AdamW {
                lr: 1e-2,
                ..AdamW::default()
            }),
            batch_size: 128,
            epochs: 30,
            seed: 0,
            retrieval: RetrievalConfig::default(),
            use_base: true,
            use_ret: true,
            hidden: None,
            text: TextEncoderSpec::default(),
            fusion_scale: None,
            eval_every: 0,
            cache_retrievals: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 || self.epochs < 1 {
            return Err(RacError::config("batch size and epochs must be >= 1"));
        }
        if self.use_ret && self.retrieval.k < 1 {
            return Err(RacError::config("k must be >= 1"));
        }
        if !(self.tau >= 0.0) || !(0.0..1.0).contains(&self.epsilon) {
            return Err(RacError::config("tau must be >= 0 and epsilon in [0, 1)"));
        }
        self.optimizer.validate()
    }

    pub fn model_spec(&self, classes: usize, input_dim: usize) -> ModelSpec {
        ModelSpec {
            classes,
            input_dim,
            hidden: self.hidden,
            use_base: self.use_base,
            use_ret: self.use_ret,
            text: self.text.clone(),
            fusion_scale: self.fusion_scale.unwrap_or_else(|| default_scale(classes)),
            seed: self.seed,
        }
    }

    /// The training loss for these class counts. Re-weighting multiplies
    /// into the loss's own weights.
    pub fn loss_spec(&self, stats: &ClassStats) -> Result<LossSpec> {
        let spec = match self.loss {
            LossKind::Ce => LossSpec::plain(stats.counts.len()),
            LossKind::Balce => balce_spec(stats)?,
            LossKind::Lace => lace_spec(stats, self.tau)?,
            LossKind::Ldam => ldam_spec(stats)?.with_tau(self.tau),
        };
        let extra = match self.reweight {
            Reweight::None => None,
            scheme => Some(reweight(stats, scheme)?),
        };
        let spec = match extra {
            Some(w) => {
                let alpha = spec.alpha.iter().zip(&w).map(|(a, b)| a * b).collect();
                spec.with_alpha(alpha)
            }
            None => spec,
        };
        Ok(spec.with_epsilon(self.epsilon))
    }
}

/// Everything a training run reads.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub test: Option<&'a Dataset>,
    pub retrieval: Option<&'a RetrievalModule>,
    /// Index record id of every training sample, when the training set is
    /// part of the index. Enables drop-first.
    pub train_ids: Option<&'a [u64]>,
    pub fixed: Option<&'a FixedEmbeddings>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
    pub be: f64,
    pub many: Option<f64>,
    pub med: Option<f64>,
    pub few: Option<f64>,
}

impl HistoryRecord {
    fn from_report(epoch: usize, split: &str, report: &EvalReport) -> Self {
        let m = report.primary();
        HistoryRecord {
            epoch,
            split: split.to_owned(),
            loss: report.loss,
            top1: m.top1,
            top5: m.top5,
            be: m.balanced_error,
            many: m.buckets.many,
            med: m.buckets.med,
            few: m.buckets.few,
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: RacModel,
    pub optim: OptimState,
    pub history: Vec<HistoryRecord>,
    pub final_eval: Option<EvalReport>,
    /// Wall-clock seconds of each epoch, lookups included unless cached.
    pub epoch_seconds: Vec<f64>,
    /// Seconds spent filling the retrieval cache.
    pub cache_seconds: f64,
}

/// Token sequences for every sample of a dataset, looked up once.
fn lookup_all(
    module: &RetrievalModule,
    data: &Dataset,
    ids: Option<&[u64]>,
    cfg: &RetrievalConfig,
    rows: &[usize],
) -> Result<Vec<Vec<u32>>> {
    let xs: Vec<&[f64]> = rows.iter().map(|&i| data.samples()[i].features.as_slice()).collect();
    let flags: Vec<Option<u64>> = rows.iter().map(|&i| ids.map(|v| v[i])).collect();
    module.tokens_batch(&xs, &flags, cfg)
}

fn features(data: &Dataset, rows: &[usize]) -> Array2<f64> {
    let d = data.dim();
    let mut x = Array2::zeros((rows.len(), d));
    for (mut dst, &i) in x.outer_iter_mut().zip(rows) {
        dst.iter_mut().zip(&data.samples()[i].features).for_each(|(a, &b)| *a = b);
    }
    x
}

const EVAL_BATCH: usize = 1024;

/// Logits of every branch on `data`, in sample order.
fn predict_all(
    model: &RacModel,
    data: &Dataset,
    module: Option<&RetrievalModule>,
    cfg: &RetrievalConfig,
    cached: Option<&[Vec<u32>]>,
) -> Result<[Option<Array2<f64>>; 3]> {
    let mut chunks = Vec::new();
    let rows: Vec<usize> = (0..data.len()).collect();
    for batch in rows.chunks(EVAL_BATCH) {
        let x = features(data, batch);
        let tokens = match (model.spec.use_ret, cached) {
            (false, _) => None,
            (true, Some(c)) => Some(pad_batch(&batch.iter().map(|&i| c[i].as_slice()).collect::<Vec<_>>())),
            (true, None) => {
                let m = module.ok_or_else(|| RacError::config("retrieval branch needs a retrieval module"))?;
                let seqs = lookup_all(m, data, None, cfg, batch)?;
                Some(pad_batch(&seqs.iter().map(Vec::as_slice).collect::<Vec<_>>()))
            }
        };
        chunks.push(model.forward(x.view(), tokens.as_ref().map(|t| t.view()))?);
    }
    let mut result: [Option<Array2<f64>>; 3] = [None, None, None];
    for (slot, branch) in Branch::ALL.iter().enumerate() {
        let parts: Option<Vec<Array2<f64>>> = chunks.iter().map(|f| f.logits(*branch).map(|l| l.values)).collect();
        if let Some(parts) = parts {
            let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|p| p.view()).collect();
            result[slot] = Some(ndarray::concatenate(Axis(0), &views).expect("equal widths"));
        }
    }
    Ok(result)
}

fn report_from(
    model: &RacModel,
    logits: &[Option<Array2<f64>>; 3],
    labels: &[usize],
    stats: &ClassStats,
    spec: &LossSpec,
) -> Result<EvalReport> {
    let output = model.spec.output_branch();
    let slot = Branch::ALL.iter().position(|&b| b == output).expect("branch");
    let out = logits[slot].as_ref().expect("output branch computed");
    let loss = adjusted_ce(out.view(), labels, spec)?.loss;
    let views = [
        (Branch::Base, logits[0].as_ref().map(|a| a.view())),
        (Branch::Ret, logits[1].as_ref().map(|a| a.view())),
        (Branch::Fused, logits[2].as_ref().map(|a| a.view())),
    ];
    EvalReport::new(stats, labels, loss, output, views)
}

/// Evaluates a trained model. Test lookups keep the nearest hit. `spec` is
/// only used for the reported loss.
pub fn evaluate(
    model: &RacModel,
    data: &Dataset,
    module: Option<&RetrievalModule>,
    retrieval: &RetrievalConfig,
    train_stats: &ClassStats,
    spec: &LossSpec,
) -> Result<EvalReport> {
    let logits = predict_all(model, data, module, retrieval, None)?;
    report_from(model, &logits, &data.labels(), train_stats, spec)
}

/// Trains the base head and text encoder jointly under one loss on the
/// fused logits, or a single branch on its own logits.
pub fn train(data: &TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = data.train;
    let stats = class_frequencies(train_set);
    let spec = cfg.loss_spec(&stats)?;
    let module = if cfg.use_ret {
        let m = data
            .retrieval
            .ok_or_else(|| RacError::config("retrieval branch needs a retrieval module"))?;
        if m.encoder.input_dim() != train_set.dim() {
            return Err(RacError::DimensionMismatch {
                expected: m.encoder.input_dim(),
                got: train_set.dim(),
            });
        }
        Some(m)
    } else {
        None
    };
    if let Some(ids) = data.train_ids {
        if ids.len() != train_set.len() {
            return Err(RacError::input("one index record id per training sample"));
        }
    }
    if let Some(test) = data.test {
        if test.dim() != train_set.dim() || test.classes() != train_set.classes() {
            return Err(RacError::input("test set shape differs from the training set"));
        }
    }

    let mut model = RacModel::new(
        cfg.model_spec(train_set.classes(), train_set.dim()),
        module.map(|m| &m.tokenizer),
        data.fixed,
    )?;
    let mut optim = OptimState::for_params(&model.params_mut());
    let all: Vec<usize> = (0..train_set.len()).collect();

    let start = Instant::now();
    let (train_cache, test_cache) = match (module, cfg.cache_retrievals) {
        (Some(m), true) => {
            let tr = lookup_all(m, train_set, data.train_ids, &cfg.retrieval, &all)?;
            let te = match data.test {
                Some(t) => Some(lookup_all(m, t, None, &cfg.retrieval, &(0..t.len()).collect::<Vec<_>>())?),
                None => None,
            };
            (Some(tr), te)
        }
        _ => (None, None),
    };
    let cache_seconds = start.elapsed().as_secs_f64();

    let labels = train_set.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = all.clone();
    let mut history = Vec::new();
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);
    let mut final_eval = None;
    let l = train_set.classes();
    let computed = [cfg.use_base, cfg.use_ret, cfg.use_base && cfg.use_ret];
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_logits = computed.map(|on| on.then(|| Array2::zeros((train_set.len(), l))));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = features(train_set, batch);
            let tokens = match (module, &train_cache) {
                (None, _) => None,
                (Some(_), Some(c)) => Some(pad_batch(&batch.iter().map(|&i| c[i].as_slice()).collect::<Vec<_>>())),
                (Some(m), None) => {
                    let seqs = lookup_all(m, train_set, data.train_ids, &cfg.retrieval, batch)?;
                    Some(pad_batch(&seqs.iter().map(Vec::as_slice).collect::<Vec<_>>()))
                }
            };
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let fwd = model.forward(x.view(), tokens.as_ref().map(|t| t.view()))?;
            let out = adjusted_ce(fwd.output(&model.spec).view(), &y, &spec)?;
            model.backward(&fwd, x.view(), tokens.as_ref().map(|t| t.view()), out.grad.view())?;
            cfg.optimizer.step(&mut model.params_mut(), &mut optim)?;
            model.zero_grad();
            loss_sum += out.loss * batch.len() as f64;
            for (slot, branch) in Branch::ALL.iter().enumerate() {
                if let (Some(dst), Some(src)) = (&mut epoch_logits[slot], fwd.logits(*branch)) {
                    for (r, &i) in batch.iter().enumerate() {
                        dst.row_mut(i).assign(&src.values.row(r));
                    }
                }
            }
        }
        epoch_seconds.push(t0.elapsed().as_secs_f64());
        let mut train_report = report_from(&model, &epoch_logits, &labels, &stats, &spec)?;
        train_report.loss = loss_sum / train_set.len() as f64;
        history.push(HistoryRecord::from_report(epoch, "train", &train_report));

        let due = epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
        if let (Some(test), true) = (data.test, due) {
            let logits = predict_all(&model, test, module, &cfg.retrieval, test_cache.as_deref())?;
            let report = report_from(&model, &logits, &test.labels(), &stats, &spec)?;
            history.push(HistoryRecord::from_report(epoch, "test", &report));
            if epoch == cfg.epochs {
                final_eval = Some(report);
            }
        }
    }
    Ok(TrainOutcome {
        model,
        optim,
        history,
        final_eval,
        epoch_seconds,
        cache_seconds,
    })
}
