use std::path::PathBuf;

use clap::{ArgAction, Args};
use serde::Serialize;

use rac_core::ann::{HnswParams, IndexKind, IndexSpec, Metric};
use rac_core::autodiff::{AdamW, Optimizer, Pooling};
use rac_core::dataspace::{AuxConfig, GenConfig, Profile};
use rac_core::fusion::{LossKind, TrainConfig};
use rac_core::losses::Reweight;
use rac_core::retrieval::{EncoderSpec, RetrievalConfig, TextEncoderSpec, TextVariant};
use rac_core::{RacError, Result};

fn parse<T: std::str::FromStr<Err = RacError>>(s: &str) -> Result<T> {
    s.parse()
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_max: usize,
    /// Ratio of the largest to the smallest class count.
    #[arg(long, default_value_t = 100.0)]
    pub imbalance: f64,
    /// exponential, step or uniform.
    #[arg(long, default_value = "exponential")]
    pub profile: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5.0)]
    pub cluster_sep: f64,
    #[arg(long, default_value_t = 0.5)]
    pub spread_min: f64,
    #[arg(long, default_value_t = 1.5)]
    pub spread_max: f64,
    #[arg(long, default_value_t = 50)]
    pub test_per_class: usize,
    /// multi-token or single-token label text.
    #[arg(long, default_value = "multi-token")]
    pub vocab: String,
    /// One class name per line; overrides --vocab.
    #[arg(long)]
    pub names_file: Option<PathBuf>,
    /// Classes of an auxiliary pool written to aux.ltds; 0 writes none.
    #[arg(long, default_value_t = 0)]
    pub aux_classes: usize,
    #[arg(long, default_value_t = 100)]
    pub aux_per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    pub aux_jitter: f64,
}

impl GenDataArgs {
    pub fn gen_config(&self) -> Result<GenConfig> {
        let config = GenConfig {
            classes: self.classes,
            dim: self.dim,
            n_max: self.n_max,
            imbalance_factor: self.imbalance,
            profile: parse::<Profile>(&self.profile)?,
            seed: self.seed,
            cluster_sep: self.cluster_sep,
            spread_range: (self.spread_min, self.spread_max),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn aux_config(&self) -> AuxConfig {
        AuxConfig {
            classes: self.aux_classes,
            per_class: self.aux_per_class,
            anchor_jitter: self.aux_jitter,
            seed: self.seed.wrapping_add(1),
            ..AuxConfig::default()
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct IndexOpts {
    /// exact or hnsw.
    #[arg(long, default_value = "hnsw")]
    pub index_type: String,
    /// l2 or cosine.
    #[arg(long, default_value = "cosine")]
    pub metric: String,
    #[arg(long = "M", default_value_t = 32)]
    #[serde(rename = "M")]
    pub m: usize,
    #[arg(long, default_value_t = 200)]
    pub ef_construction: usize,
    #[arg(long)]
    pub ef_search: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub index_seed: u64,
    /// identity or random-projection.
    #[arg(long, default_value = "identity")]
    pub encoder: String,
    /// Output width of a random projection.
    #[arg(long, default_value_t = 64)]
    pub encoder_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub encoder_seed: u64,
}

impl IndexOpts {
    pub fn index_spec(&self) -> Result<IndexSpec> {
        let hnsw = HnswParams {
            m: self.m,
            ef_construction: self.ef_construction,
            ef_search: self.ef_search,
            seed: self.index_seed,
            ..HnswParams::default()
        };
        hnsw.validate()?;
        Ok(IndexSpec {
            kind: parse::<IndexKind>(&self.index_type)?,
            metric: parse::<Metric>(&self.metric)?,
            hnsw,
        })
    }

    pub fn encoder_spec(&self, input_dim: usize) -> Result<EncoderSpec> {
        match self.encoder.as_str() {
            "identity" => Ok(EncoderSpec::Identity { dim: input_dim }),
            "random-projection" => Ok(EncoderSpec::RandomProjection {
                input_dim,
                dim: self.encoder_dim,
                seed: self.encoder_seed,
            }),
            other => Err(RacError::config(format!("unknown encoder `{other}`"))),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainOpts {
    /// ce, balce, lace or ldam.
    #[arg(long, default_value = "lace")]
    pub loss: String,
    /// none, inv_log or inv_sqrt.
    #[arg(long, default_value = "none")]
    pub reweight: String,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Label smoothing.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// adamw or sgd.
    #[arg(long, default_value = "adamw")]
    pub optimizer: String,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub adam_eps: f64,
    #[arg(long, default_value_t = 0.02)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub k: usize,
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true", default_value_t = true)]
    pub drop_first: bool,
    /// Base branch only.
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true", default_value_t = false)]
    pub no_retrieval: bool,
    /// Retrieval branch only.
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true", default_value_t = false)]
    pub no_base: bool,
    /// Width of a ReLU hidden layer in the base head.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// learned_pool, fixed_bow or random_bow.
    #[arg(long, default_value = "learned_pool")]
    pub text_encoder: String,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// mean or sum.
    #[arg(long, default_value = "mean")]
    pub pooling: String,
    #[arg(long, default_value_t = 0)]
    pub text_seed: u64,
    /// Word vectors for fixed_bow: a "V d" line, then "word v_1 ... v_d".
    #[arg(long)]
    pub fixed_embeddings: Option<PathBuf>,
    /// Defaults to half the class count.
    #[arg(long)]
    pub fusion_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub eval_every: usize,
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true", default_value_t = true)]
    pub cache_retrievals: bool,
}

impl TrainOpts {
    pub fn train_config(&self) -> Result<TrainConfig> {
        let optimizer = match self.optimizer.as_str() {
            "adamw" => Optimizer::AdamW(AdamW {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
                weight_decay: self.weight_decay,
            }),
            "sgd" => Optimizer::Sgd { lr: self.lr },
            other => return Err(RacError::config(format!("unknown optimizer `{other}`"))),
        };
        let variant = parse::<TextVariant>(&self.text_encoder)?;
        let text = TextEncoderSpec {
            variant,
            embed_dim: self.embed_dim.unwrap_or_else(|| variant.default_dim()),
            pooling: parse::<Pooling>(&self.pooling)?,
            seed: self.text_seed,
        };
        let cfg = TrainConfig {
            loss: parse::<LossKind>(&self.loss)?,
            reweight: parse::<Reweight>(&self.reweight)?,
            tau: self.tau,
            epsilon: self.epsilon,
            optimizer,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            retrieval: RetrievalConfig {
                k: self.k,
                drop_first: self.drop_first,
            },
            use_base: !self.no_base,
            use_ret: !self.no_retrieval,
            hidden: self.hidden,
            text,
            fusion_scale: self.fusion_scale,
            eval_every: self.eval_every,
            cache_retrievals: self.cache_retrievals,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct BuildIndexArgs {
    /// A dataset to index, as PATH or TAG=PATH. Untagged sources are tagged
    /// `train` (first) and `aux`, `aux2`, ... after that.
    #[arg(long, required = true)]
    pub add: Vec<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub index: IndexOpts,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// A directory written by build-index. Without it the training set is
    /// indexed and the index saved next to the model.
    #[arg(long)]
    pub index_dir: Option<PathBuf>,
    /// Source tag of the training set inside --index-dir.
    #[arg(long, default_value = "train")]
    pub train_tag: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub index: IndexOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: TrainOpts,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    /// A directory written by train.
    #[arg(long)]
    pub model_dir: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides the index recorded with the model.
    #[arg(long)]
    pub index_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct KnnArgs {
    #[arg(long)]
    pub index_dir: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub k: Vec<usize>,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepArgs {
    /// k or tau.
    #[arg(long)]
    pub axis: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub index: IndexOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: TrainOpts,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct AblateArgs {
    /// fraction, per-class, classes or subset (values CLASSESxPER_CLASS).
    #[arg(long)]
    pub mode: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    /// Labeled auxiliary pool; only its samples are indexed.
    #[arg(long)]
    pub aux: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub index: IndexOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: TrainOpts,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct BenchArgs {
    /// A directory written by build-index.
    #[arg(long, conflicts_with = "data")]
    pub index_dir: Option<PathBuf>,
    /// Index this dataset in memory instead.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Also measure recall against an exact scan of the same keys.
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true", default_value_t = true)]
    pub recall: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub index: IndexOpts,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct InspectArgs {
    #[arg(long)]
    pub index_dir: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 30)]
    pub k: usize,
}
