use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Tokenizer;
use crate::autodiff::{affine_backward, affine_forward, embed_pool_backward, embed_pool_forward, ParamTensor, Pooling};
use crate::error::{RacError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextVariant {
    /// Trainable token embeddings.
    LearnedPool,
    /// Embeddings read from a file, never trained.
    FixedBow,
    /// Embeddings drawn once from U[0, 1), never trained.
    RandomBow,
}

impl TextVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            TextVariant::LearnedPool => "learned_pool",
            TextVariant::FixedBow => "fixed_bow",
            TextVariant::RandomBow => "random_bow",
        }
    }

    pub fn default_dim(self) -> usize {
        match self {
            TextVariant::LearnedPool => 512,
            TextVariant::FixedBow | TextVariant::RandomBow => 300,
        }
    }
}

impl std::str::FromStr for TextVariant {
    type Err = RacError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "learned_pool" => Ok(TextVariant::LearnedPool),
            "fixed_bow" => Ok(TextVariant::FixedBow),
            "random_bow" => Ok(TextVariant::RandomBow),
            _ => Err(RacError::config(format!("unknown text encoder `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEncoderSpec {
    pub variant: TextVariant,
    pub embed_dim: usize,
    pub pooling: Pooling,
    pub seed: u64,
}

impl TextEncoderSpec {
    pub fn new(variant: TextVariant) -> Self {
        TextEncoderSpec {
            variant,
            embed_dim: variant.default_dim(),
            pooling: Pooling::Mean,
            seed: 0,
        }
    }
}

impl Default for TextEncoderSpec {
    fn default() -> Self {
        TextEncoderSpec::new(TextVariant::LearnedPool)
    }
}

/// Word vectors read from a `V d` / `word v_1 .. v_d` text file.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedEmbeddings {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl FixedEmbeddings {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| RacError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |detail: String| RacError::format("embedding file", detail);
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        let [v, d] = header.as_slice() else {
            return Err(bad("header must be `V d`".into()));
        };
        let v: usize = v.parse().map_err(|_| bad(format!("bad V `{v}`")))?;
        let dim: usize = d.parse().map_err(|_| bad(format!("bad d `{d}`")))?;
        let mut vectors = HashMap::with_capacity(v);
        for (i, line) in lines.enumerate() {
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else {
                continue;
            };
            let vals = fields
                .map(|f| f.parse::<f64>().map_err(|_| bad(format!("line {}: bad value `{f}`", i + 2))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != dim {
                return Err(bad(format!("line {}: {} values, expected {dim}", i + 2, vals.len())));
            }
            vectors.insert(word.to_lowercase(), vals);
        }
        if vectors.len() != v {
            return Err(bad(format!("header declares {v} words, found {}", vectors.len())));
        }
        Ok(FixedEmbeddings { dim, vectors })
    }
}

/// Bag-of-tokens text encoder: pooled token embeddings through an affine
/// head to class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoder {
    pub spec: TextEncoderSpec,
    pub table: ParamTensor,
    pub w: ParamTensor,
    pub b: ParamTensor,
}

impl TextEncoder {
    /// `fixed` is required for `FixedBow` and ignored otherwise. Words the
    /// file lacks get zero vectors.
    pub fn new(spec: TextEncoderSpec, tokenizer: &Tokenizer, classes: usize, fixed: Option<&FixedEmbeddings>) -> Result<Self> {
        if spec.embed_dim == 0 || classes == 0 {
            return Err(RacError::config("text encoder needs positive width and class count"));
        }
        let v = tokenizer.vocab_size();
        let d = spec.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let table = match spec.variant {
            TextVariant::LearnedPool => {
                let t = Array2::from_shape_simple_fn((v, d), || {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                });
                ParamTensor::new("text.embed", t, true)
            }
            TextVariant::RandomBow => {
                let t = Array2::from_shape_simple_fn((v, d), || rng.random::<f32>() as f64);
                ParamTensor::new("text.embed", t, false)
            }
            TextVariant::FixedBow => {
                let fixed = fixed.ok_or_else(|| RacError::config("fixed_bow needs an embedding file"))?;
                if fixed.dim != d {
                    return Err(RacError::DimensionMismatch { expected: d, got: fixed.dim });
                }
                let mut t = Array2::zeros((v, d));
                for (i, word) in tokenizer.words().iter().enumerate() {
                    if let Some(vec) = fixed.vectors.get(word) {
                        t.row_mut(i + 1).iter_mut().zip(vec).for_each(|(a, &b)| *a = b);
                    }
                }
                ParamTensor::new("text.embed", t, false)
            }
        };
        let scale = 1.0 / (d as f64).sqrt();
        let w = Array2::from_shape_simple_fn((d, classes), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        Ok(TextEncoder {
            spec,
            table,
            w: ParamTensor::new("text.w", w, true),
            b: ParamTensor::new("text.b", Array2::zeros((1, classes)), true),
        })
    }

    pub fn classes(&self) -> usize {
        self.w.value.ncols()
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.table, &self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.table, &mut self.w, &mut self.b]
    }

    pub fn pool(&self, tokens: ArrayView2<'_, u32>) -> Result<Array2<f64>> {
        embed_pool_forward(tokens, self.table.value.view(), self.spec.pooling)
    }

    /// Logits from pooled embeddings.
    pub fn head(&self, pooled: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        affine_forward(pooled, self.w.value.view(), self.b.value.row(0))
    }

    /// One call for the whole batch; row `i` of the output belongs to row
    /// `i` of `tokens`.
    pub fn logits(&self, tokens: ArrayView2<'_, u32>) -> Result<Array2<f64>> {
        self.head(self.pool(tokens)?.view())
    }

    /// Accumulates parameter gradients for upstream `d loss / d logits`.
    pub fn backward(&mut self, tokens: ArrayView2<'_, u32>, pooled: ArrayView2<'_, f64>, upstream: ArrayView2<'_, f64>) -> Result<()> {
        let g = affine_backward(pooled, self.w.value.view(), upstream)?;
        self.w.accumulate(g.w.view())?;
        self.b.accumulate(g.b.view().insert_axis(ndarray::Axis(0)))?;
        if self.table.trainable {
            embed_pool_backward(tokens, g.x.view(), self.spec.pooling, self.table.grad_mut())?;
        }
        Ok(())
    }
}
