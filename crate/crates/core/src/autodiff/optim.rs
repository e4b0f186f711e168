use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ParamTensor;
use crate::error::{RacError, Result};

/// Plain gradient descent on every trainable parameter.
pub fn sgd_step(params: &mut [&mut ParamTensor], lr: f64) {
    for p in params.iter_mut().filter(|p| p.trainable) {
        p.value.scaled_add(-lr, &p.grad);
        p.mark_stepped();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.02,
        }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && unit(self.beta1) && unit(self.beta2) && self.eps > 0.0 && self.weight_decay >= 0.0) {
            return Err(RacError::config(format!("invalid AdamW hyperparameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub name: String,
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

/// Moment estimates for the trainable parameters, in parameter order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct OptimState {
    pub step: u64,
    pub moments: Vec<Moments>,
}

impl OptimState {
    pub fn for_params(params: &[&mut ParamTensor]) -> Self {
        OptimState {
            step: 0,
            moments: params
                .iter()
                .filter(|p| p.trainable)
                .map(|p| Moments {
                    name: p.name.clone(),
                    m: Array2::zeros(p.value.raw_dim()),
                    v: Array2::zeros(p.value.raw_dim()),
                })
                .collect(),
        }
    }
}

/// One AdamW update with bias-corrected moments. Weight decay is applied to
/// the weights directly, not folded into the gradient.
pub fn adamw_step(params: &mut [&mut ParamTensor], state: &mut OptimState, hp: &AdamW) -> Result<()> {
    let trainable: Vec<&mut &mut ParamTensor> = params.iter_mut().filter(|p| p.trainable).collect();
    if trainable.len() != state.moments.len() {
        return Err(RacError::input("optimizer state does not match the parameter list"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (p, mo) in trainable.into_iter().zip(&mut state.moments) {
        if mo.name != p.name || mo.m.dim() != p.value.dim() {
            return Err(RacError::input(format!(
                "optimizer state for `{}` applied to `{}`",
                mo.name, p.name
            )));
        }
        let decay = 1.0 - hp.lr * hp.weight_decay;
        ndarray::Zip::from(&mut p.value)
            .and(&p.grad)
            .and(&mut mo.m)
            .and(&mut mo.v)
            .for_each(|w, &g, m, v| {
                *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
                *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = *w * decay - hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
            });
        p.mark_stepped();
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { lr: f64 },
    AdamW(AdamW),
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::AdamW(AdamW::default())
    }
}

impl Optimizer {
    pub fn validate(&self) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } if *lr > 0.0 => Ok(()),
            Optimizer::Sgd { lr } => Err(RacError::config(format!("SGD learning rate {lr} must be positive"))),
            Optimizer::AdamW(hp) => hp.validate(),
        }
    }

    /// Applies one update; `state` is only used by AdamW.
    pub fn step(&self, params: &mut [&mut ParamTensor], state: &mut OptimState) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => {
                sgd_step(params, *lr);
                Ok(())
            }
            Optimizer::AdamW(hp) => adamw_step(params, state, hp),
        }
    }
}
