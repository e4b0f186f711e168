use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataspace::ClassStats;
use crate::error::{RacError, Result};

/// How class-dependent offsets enter the softmax inside the loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Adjustment {
    /// `tau * delta[c]` is added to logit `c` for every sample.
    Offset(Vec<f64>),
    /// `tau * margin[y]` is subtracted from the true-class logit only.
    TrueClassMargin(Vec<f64>),
}

/// Weights `alpha`, adjustment, temperature `tau` and label smoothing
/// `epsilon` of a re-weighted, logit-adjusted softmax cross-entropy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub alpha: Vec<f64>,
    pub adjustment: Adjustment,
    pub tau: f64,
    pub epsilon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reweight {
    None,
    InvLog,
    InvSqrt,
}

impl std::str::FromStr for Reweight {
    type Err = RacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Reweight::None),
            "inv_log" | "inv-log" => Ok(Reweight::InvLog),
            "inv_sqrt" | "inv-sqrt" => Ok(Reweight::InvSqrt),
            other => Err(RacError::config(format!("unknown re-weighting `{other}`"))),
        }
    }
}

impl LossSpec {
    /// Standard cross-entropy over `classes` classes.
    pub fn plain(classes: usize) -> Self {
        LossSpec {
            alpha: vec![1.0; classes],
            adjustment: Adjustment::Offset(vec![0.0; classes]),
            tau: 1.0,
            epsilon: 0.0,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_alpha(mut self, alpha: Vec<f64>) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn classes(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.alpha.len();
        let adj = match &self.adjustment {
            Adjustment::Offset(v) | Adjustment::TrueClassMargin(v) => v,
        };
        if adj.len() != l {
            return Err(RacError::config(format!(
                "adjustment has {} entries for {l} classes",
                adj.len()
            )));
        }
        if self.alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(RacError::config("class weights must be positive and finite"));
        }
        if adj.iter().any(|d| !d.is_finite()) {
            return Err(RacError::config("adjustments must be finite"));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(RacError::config("tau must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(RacError::config("label smoothing must lie in [0, 1)"));
        }
        Ok(())
    }
}

fn nonzero_counts(stats: &ClassStats) -> Result<&[usize]> {
    stats.require_nonzero()?;
    Ok(&stats.counts)
}

/// Balanced softmax cross-entropy: `alpha_y = 1 / N_y`, no adjustment.
pub fn balce_spec(stats: &ClassStats) -> Result<LossSpec> {
    let counts = nonzero_counts(stats)?;
    let l = counts.len();
    Ok(LossSpec::plain(l).with_alpha(counts.iter().map(|&n| 1.0 / n as f64).collect()))
}

/// Logit-adjusted cross-entropy: `delta_y = ln(N_y / N)`, `alpha = 1`.
pub fn lace_spec(stats: &ClassStats, tau: f64) -> Result<LossSpec> {
    let counts = nonzero_counts(stats)?;
    let total = stats.total as f64;
    let delta = counts.iter().map(|&n| (n as f64 / total).ln()).collect();
    Ok(LossSpec {
        alpha: vec![1.0; counts.len()],
        adjustment: Adjustment::Offset(delta),
        tau,
        epsilon: 0.0,
    })
}

/// Label-distribution-aware margin: the true-class logit is lowered by
/// `N_y^(-1/4)`, `alpha_y = 1 / N_y`.
pub fn ldam_spec(stats: &ClassStats) -> Result<LossSpec> {
    let counts = nonzero_counts(stats)?;
    Ok(LossSpec {
        alpha: counts.iter().map(|&n| 1.0 / n as f64).collect(),
        adjustment: Adjustment::TrueClassMargin(
            counts.iter().map(|&n| (n as f64).powf(-0.25)).collect(),
        ),
        tau: 1.0,
        epsilon: 0.0,
    })
}

/// Per-class sample weights. `InvLog` floors counts at 2 so that
/// singleton classes keep a finite weight.
pub fn reweight(stats: &ClassStats, scheme: Reweight) -> Result<Vec<f64>> {
    let counts = nonzero_counts(stats)?;
    Ok(counts
        .iter()
        .map(|&n| match scheme {
            Reweight::None => 1.0,
            Reweight::InvSqrt => 1.0 / (n as f64).sqrt(),
            Reweight::InvLog => 1.0 / (n.max(2) as f64).ln(),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    /// Mean over the batch.
    pub loss: f64,
    /// d loss / d logits.
    pub grad: Array2<f64>,
}

/// Mean over the batch of `-alpha_y * sum_c t_c * log softmax(z)_c`, where
/// `z` is the adjusted logit row and `t` the smoothed one-hot target.
pub fn adjusted_ce(
    logits: ArrayView2<'_, f64>,
    labels: &[usize],
    spec: &LossSpec,
) -> Result<LossOutput> {
    spec.validate()?;
    let (n, l) = logits.dim();
    if l != spec.classes() {
        return Err(RacError::DimensionMismatch {
            expected: spec.classes(),
            got: l,
        });
    }
    if labels.len() != n {
        return Err(RacError::input(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(RacError::input("empty batch"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(RacError::input("non-finite logits"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= l) {
        return Err(RacError::input(format!("label {bad} >= class count {l}")));
    }

    let eps = spec.epsilon;
    let off = eps / l as f64;
    let mut grad = Array2::zeros((n, l));
    let mut total = 0.0;
    let mut z = vec![0.0; l];
    for (i, (row, &y)) in logits.outer_iter().zip(labels).enumerate() {
        match &spec.adjustment {
            Adjustment::Offset(delta) => {
                for c in 0..l {
                    z[c] = row[c] + spec.tau * delta[c];
                }
            }
            Adjustment::TrueClassMargin(margin) => {
                z.iter_mut().zip(row.iter()).for_each(|(zc, &f)| *zc = f);
                z[y] -= spec.tau * margin[y];
            }
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum_exp.ln();
        let alpha = spec.alpha[y];
        let mut sample_loss = 0.0;
        for c in 0..l {
            let t = if c == y { 1.0 - eps + off } else { off };
            let log_p = z[c] - log_norm;
            sample_loss -= t * log_p;
            grad[[i, c]] = alpha * (log_p.exp() - t) / n as f64;
        }
        total += alpha * sample_loss;
    }
    Ok(LossOutput {
        loss: total / n as f64,
        grad,
    })
}
