use ndarray::{Array2, ArrayView2, Zip};

use crate::autodiff::{normalize, normalize_grad};
use crate::error::{RacError, Result};
use crate::losses::{Branch, Logits};

/// Norm floor for the branch normalization.
pub const EPS_NORM: f64 = 1e-12;

/// The default fusion scale `L / 2`.
pub fn default_scale(classes: usize) -> f64 {
    classes as f64 / 2.0
}

fn check_pair(f_ret: ArrayView2<'_, f64>, f_base: ArrayView2<'_, f64>) -> Result<()> {
    if f_ret.dim() != f_base.dim() {
        return Err(RacError::input(format!(
            "branch logits of shapes {:?} and {:?}",
            f_ret.dim(),
            f_base.dim()
        )));
    }
    Ok(())
}

/// Row-wise `scale * (f_ret / |f_ret| + f_base / |f_base|)`.
pub fn fuse(f_ret: ArrayView2<'_, f64>, f_base: ArrayView2<'_, f64>, scale: f64, eps: f64) -> Result<Array2<f64>> {
    check_pair(f_ret, f_base)?;
    let mut out = Array2::zeros(f_ret.raw_dim());
    Zip::from(out.rows_mut())
        .and(f_ret.rows())
        .and(f_base.rows())
        .for_each(|mut o, r, b| {
            let (ur, _) = normalize(r, eps);
            let (ub, _) = normalize(b, eps);
            o.assign(&((ur + ub) * scale));
        });
    Ok(out)
}

pub fn fuse_logits(f_ret: &Logits, f_base: &Logits, scale: f64) -> Result<Logits> {
    Ok(Logits::new(
        fuse(f_ret.values.view(), f_base.values.view(), scale, EPS_NORM)?,
        Branch::Fused,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FuseGrads {
    pub ret: Array2<f64>,
    pub base: Array2<f64>,
}

pub fn fuse_backward(
    f_ret: ArrayView2<'_, f64>,
    f_base: ArrayView2<'_, f64>,
    upstream: ArrayView2<'_, f64>,
    scale: f64,
    eps: f64,
) -> Result<FuseGrads> {
    check_pair(f_ret, f_base)?;
    check_pair(f_ret, upstream)?;
    let mut ret = Array2::zeros(f_ret.raw_dim());
    let mut base = Array2::zeros(f_ret.raw_dim());
    for i in 0..f_ret.nrows() {
        let g = upstream.row(i).mapv(|v| v * scale);
        ret.row_mut(i).assign(&normalize_grad(f_ret.row(i), g.view(), eps));
        base.row_mut(i).assign(&normalize_grad(f_base.row(i), g.view(), eps));
    }
    Ok(FuseGrads { ret, base })
}
