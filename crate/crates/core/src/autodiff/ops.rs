use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};

/// Token id reserved for padding; never looked up.
pub const PAD: u32 = 0;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(RacError::input(what()))
    }
}

/// `x W + b`.
pub fn affine_forward(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    b: ArrayView1<'_, f64>,
) -> Result<Array2<f64>> {
    check(x.ncols() == w.nrows() && w.ncols() == b.len(), || {
        format!(
            "affine shapes x {:?}, W {:?}, b {}",
            x.dim(),
            w.dim(),
            b.len()
        )
    })?;
    Ok(x.dot(&w) + &b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineGrads {
    pub x: Array2<f64>,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

pub fn affine_backward(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    upstream: ArrayView2<'_, f64>,
) -> Result<AffineGrads> {
    check(
        x.ncols() == w.nrows() && upstream.dim() == (x.nrows(), w.ncols()),
        || format!("affine backward shapes x {:?}, W {:?}, dy {:?}", x.dim(), w.dim(), upstream.dim()),
    )?;
    Ok(AffineGrads {
        x: upstream.dot(&w.t()),
        w: x.t().dot(&upstream),
        b: upstream.sum_axis(Axis(0)),
    })
}

pub fn relu_forward(x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient of ReLU given its input `x`. The kink at 0 takes slope 0.
pub fn relu_backward(x: ArrayView2<'_, f64>, upstream: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut g = upstream.to_owned();
    g.zip_mut_with(&x, |g, &v| {
        if v <= 0.0 {
            *g = 0.0
        }
    });
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Sum,
}

impl std::str::FromStr for Pooling {
    type Err = RacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "sum" => Ok(Pooling::Sum),
            other => Err(RacError::config(format!("unknown pooling `{other}`"))),
        }
    }
}

fn pool_scale(row: ArrayView1<'_, u32>, mode: Pooling) -> Option<f64> {
    let count = row.iter().filter(|&&t| t != PAD).count();
    match (count, mode) {
        (0, _) => None,
        (_, Pooling::Sum) => Some(1.0),
        (n, Pooling::Mean) => Some(1.0 / n as f64),
    }
}

/// Pools embedding rows of the non-padding tokens of each sequence. A row
/// of padding only pools to zero.
pub fn embed_pool_forward(
    ids: ArrayView2<'_, u32>,
    table: ArrayView2<'_, f64>,
    mode: Pooling,
) -> Result<Array2<f64>> {
    let vocab = table.nrows();
    if let Some(&bad) = ids.iter().find(|&&t| t as usize >= vocab) {
        return Err(RacError::input(format!("token id {bad} outside vocabulary of {vocab}")));
    }
    let mut out = Array2::zeros((ids.nrows(), table.ncols()));
    for (row, mut dst) in ids.outer_iter().zip(out.outer_iter_mut()) {
        let Some(scale) = pool_scale(row, mode) else {
            continue;
        };
        for &t in row.iter().filter(|&&t| t != PAD) {
            dst.scaled_add(scale, &table.row(t as usize));
        }
    }
    Ok(out)
}

/// Scatters `upstream` (one row per sequence) into `table_grad`. A token
/// that occurs twice receives its share twice.
pub fn embed_pool_backward(
    ids: ArrayView2<'_, u32>,
    upstream: ArrayView2<'_, f64>,
    mode: Pooling,
    table_grad: &mut Array2<f64>,
) -> Result<()> {
    check(
        upstream.nrows() == ids.nrows() && upstream.ncols() == table_grad.ncols(),
        || format!("pool backward shapes ids {:?}, dy {:?}, table {:?}", ids.dim(), upstream.dim(), table_grad.dim()),
    )?;
    for (row, g) in ids.outer_iter().zip(upstream.outer_iter()) {
        let Some(scale) = pool_scale(row, mode) else {
            continue;
        };
        for &t in row.iter().filter(|&&t| t != PAD) {
            table_grad.row_mut(t as usize).scaled_add(scale, &g);
        }
    }
    Ok(())
}

/// `x / max(|x|, eps)` and the norm actually used.
pub fn normalize(x: ArrayView1<'_, f64>, eps: f64) -> (Array1<f64>, f64) {
    let norm = x.dot(&x).sqrt().max(eps);
    (x.mapv(|v| v / norm), norm)
}

/// Gradient of `x / |x|`: `(I - u u^T) upstream / |x|` with `u = x / |x|`.
/// Below `eps` the norm is clamped, the map is `x / eps` and its gradient
/// is `upstream / eps`.
pub fn normalize_grad(x: ArrayView1<'_, f64>, upstream: ArrayView1<'_, f64>, eps: f64) -> Array1<f64> {
    let raw = x.dot(&x).sqrt();
    if raw < eps {
        return upstream.mapv(|g| g / eps);
    }
    let u = x.mapv(|v| v / raw);
    let radial = u.dot(&upstream);
    (&upstream - &(radial * &u)) / raw
}
