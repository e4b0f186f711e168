use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{default_scale, fuse, fuse_backward, EPS_NORM};
use crate::autodiff::{affine_backward, affine_forward, relu_backward, relu_forward, ParamTensor};
use crate::error::{RacError, Result};
use crate::losses::{Branch, Logits};
use crate::retrieval::{FixedEmbeddings, TextEncoder, TextEncoderSpec, Tokenizer};

/// Architecture of a [`RacModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub classes: usize,
    pub input_dim: usize,
    /// Width of an optional ReLU layer in the base head.
    pub hidden: Option<usize>,
    pub use_base: bool,
    pub use_ret: bool,
    pub text: TextEncoderSpec,
    pub fusion_scale: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.use_base || self.use_ret) {
            return Err(RacError::config("at least one branch must be enabled"));
        }
        if self.classes < 2 || self.input_dim == 0 || self.hidden == Some(0) {
            return Err(RacError::config("model needs >= 2 classes and positive widths"));
        }
        if !(self.fusion_scale > 0.0) {
            return Err(RacError::config("fusion scale must be positive"));
        }
        Ok(())
    }

    /// The branch whose logits are trained and reported as the model output.
    pub fn output_branch(&self) -> Branch {
        match (self.use_base, self.use_ret) {
            (true, true) => Branch::Fused,
            (true, false) => Branch::Base,
            _ => Branch::Ret,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    w: ParamTensor,
    b: ParamTensor,
}

impl Layer {
    fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        });
        Layer {
            w: ParamTensor::new(format!("{name}.w"), w, true),
            b: ParamTensor::new(format!("{name}.b"), Array2::zeros((1, fan_out)), true),
        }
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        affine_forward(x, self.w.value.view(), self.b.value.row(0))
    }

    fn backward(&mut self, x: ArrayView2<'_, f64>, upstream: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let g = affine_backward(x, self.w.value.view(), upstream)?;
        self.w.accumulate(g.w.view())?;
        self.b.accumulate(g.b.view().insert_axis(Axis(0)))?;
        Ok(g.x)
    }
}

/// Trainable base head: affine, or affine-ReLU-affine.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseHead {
    hidden: Option<Layer>,
    out: Layer,
}

impl BaseHead {
    fn new(input_dim: usize, hidden: Option<usize>, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        match hidden {
            Some(h) => BaseHead {
                hidden: Some(Layer::new("base.hidden", input_dim, h, rng)),
                out: Layer::new("base.out", h, classes, rng),
            },
            None => BaseHead {
                hidden: None,
                out: Layer::new("base.out", input_dim, classes, rng),
            },
        }
    }

    fn params(&self) -> Vec<&ParamTensor> {
        let mut v: Vec<&ParamTensor> = Vec::new();
        if let Some(h) = &self.hidden {
            v.extend([&h.w, &h.b]);
        }
        v.extend([&self.out.w, &self.out.b]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v: Vec<&mut ParamTensor> = Vec::new();
        if let Some(h) = &mut self.hidden {
            v.extend([&mut h.w, &mut h.b]);
        }
        v.extend([&mut self.out.w, &mut self.out.b]);
        v
    }
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pre_hidden: Option<Array2<f64>>,
    base_input: Option<Array2<f64>>,
    pooled: Option<Array2<f64>>,
    pub base: Option<Array2<f64>>,
    pub ret: Option<Array2<f64>>,
    pub fused: Option<Array2<f64>>,
}

impl Forward {
    /// Logits of the given branch, if computed.
    pub fn logits(&self, branch: Branch) -> Option<Logits> {
        let v = match branch {
            Branch::Base => &self.base,
            Branch::Ret => &self.ret,
            Branch::Fused => &self.fused,
        };
        v.as_ref().map(|v| Logits::new(v.clone(), branch))
    }

    pub fn output(&self, spec: &ModelSpec) -> &Array2<f64> {
        match spec.output_branch() {
            Branch::Fused => self.fused.as_ref(),
            Branch::Base => self.base.as_ref(),
            Branch::Ret => self.ret.as_ref(),
        }
        .expect("output branch computed")
    }
}

/// Base head and retrieval text encoder with normalized-sum fusion.
#[derive(Clone, Debug, PartialEq)]
pub struct RacModel {
    pub spec: ModelSpec,
    base: Option<BaseHead>,
    text: Option<TextEncoder>,
}

impl RacModel {
    pub fn new(spec: ModelSpec, tokenizer: Option<&Tokenizer>, fixed: Option<&FixedEmbeddings>) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let base = spec
            .use_base
            .then(|| BaseHead::new(spec.input_dim, spec.hidden, spec.classes, &mut rng));
        let text = if spec.use_ret {
            let tok = tokenizer.ok_or_else(|| RacError::config("retrieval branch needs a vocabulary"))?;
            let text_spec = TextEncoderSpec {
                seed: spec.text.seed ^ spec.seed.rotate_left(17),
                ..spec.text.clone()
            };
            Some(TextEncoder::new(text_spec, tok, spec.classes, fixed)?)
        } else {
            None
        };
        Ok(RacModel { spec, base, text })
    }

    /// Default spec for `classes` and `input_dim` with both branches on.
    pub fn default_spec(classes: usize, input_dim: usize) -> ModelSpec {
        ModelSpec {
            classes,
            input_dim,
            hidden: None,
            use_base: true,
            use_ret: true,
            text: TextEncoderSpec::default(),
            fusion_scale: default_scale(classes),
            seed: 0,
        }
    }

    pub fn text_encoder(&self) -> Option<&TextEncoder> {
        self.text.as_ref()
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.base.as_ref().map(BaseHead::params).unwrap_or_default();
        if let Some(t) = &self.text {
            v.extend(t.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.base.as_mut().map(BaseHead::params_mut).unwrap_or_default();
        if let Some(t) = &mut self.text {
            v.extend(t.params_mut());
        }
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// `x` is `N x D`; `tokens` (`N x S`) is required iff the retrieval
    /// branch is on.
    pub fn forward(&self, x: ArrayView2<'_, f64>, tokens: Option<ArrayView2<'_, u32>>) -> Result<Forward> {
        let mut fwd = Forward {
            pre_hidden: None,
            base_input: None,
            pooled: None,
            base: None,
            ret: None,
            fused: None,
        };
        if let Some(head) = &self.base {
            if x.ncols() != self.spec.input_dim {
                return Err(RacError::DimensionMismatch {
                    expected: self.spec.input_dim,
                    got: x.ncols(),
                });
            }
            let input = match &head.hidden {
                Some(h) => {
                    let pre = h.forward(x)?;
                    let act = relu_forward(pre.view());
                    fwd.pre_hidden = Some(pre);
                    act
                }
                None => x.to_owned(),
            };
            fwd.base = Some(head.out.forward(input.view())?);
            fwd.base_input = Some(input);
        }
        if let Some(text) = &self.text {
            let tokens = tokens.ok_or_else(|| RacError::input("retrieval branch needs tokens"))?;
            if tokens.nrows() != x.nrows() {
                return Err(RacError::input("token batch and feature batch differ in size"));
            }
            let pooled = text.pool(tokens)?;
            fwd.ret = Some(text.head(pooled.view())?);
            fwd.pooled = Some(pooled);
        }
        if let (Some(b), Some(r)) = (&fwd.base, &fwd.ret) {
            fwd.fused = Some(fuse(r.view(), b.view(), self.spec.fusion_scale, EPS_NORM)?);
        }
        Ok(fwd)
    }

    /// Accumulates parameter gradients for `d loss / d output`.
    pub fn backward(
        &mut self,
        fwd: &Forward,
        x: ArrayView2<'_, f64>,
        tokens: Option<ArrayView2<'_, u32>>,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<()> {
        let (g_base, g_ret) = match (&fwd.base, &fwd.ret) {
            (Some(b), Some(r)) => {
                let g = fuse_backward(r.view(), b.view(), upstream, self.spec.fusion_scale, EPS_NORM)?;
                (Some(g.base), Some(g.ret))
            }
            (Some(_), None) => (Some(upstream.to_owned()), None),
            _ => (None, Some(upstream.to_owned())),
        };
        if let (Some(head), Some(g)) = (&mut self.base, g_base) {
            let input = fwd.base_input.as_ref().expect("forward ran the base head");
            let gx = head.out.backward(input.view(), g.view())?;
            if let Some(h) = &mut head.hidden {
                let pre = fwd.pre_hidden.as_ref().expect("hidden pre-activation");
                let g_pre = relu_backward(pre.view(), gx.view());
                h.backward(x, g_pre.view())?;
            }
        }
        if let (Some(text), Some(g)) = (&mut self.text, g_ret) {
            let tokens = tokens.ok_or_else(|| RacError::input("retrieval branch needs tokens"))?;
            let pooled = fwd.pooled.as_ref().expect("forward ran the text encoder");
            text.backward(tokens, pooled.view(), g.view())?;
        }
        Ok(())
    }
}
