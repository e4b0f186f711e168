//! Hand-written forward and backward passes for the handful of operators
//! the model needs, plus optimizers, checkpoints and a finite-difference
//! gradient checker.
//!
//! There is no tape. Each layer exposes a `*_forward` that returns what its
//! backward needs and a `*_backward` that maps an upstream gradient to
//! gradients of its inputs. Parameter gradients accumulate in
//! [`ParamTensor::grad`] until the next [`ParamTensor::zero_grad`].

mod checkpoint;
mod gradcheck;
mod ops;
mod optim;

pub use checkpoint::*;
pub use gradcheck::*;
pub use ops::*;
pub use optim::*;

use ndarray::{Array2, ArrayView2};

use crate::error::{RacError, Result};

/// A named parameter matrix with its gradient accumulator. Vectors are
/// stored as `1 x n` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    /// Frozen tensors (fixed embedding tables) are saved but never updated.
    pub trainable: bool,
    stepped: bool,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Array2<f64>, trainable: bool) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        ParamTensor {
            name: name.into(),
            value,
            grad,
            trainable,
            stepped: false,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
        self.stepped = false;
    }

    /// Adds `g` into the gradient. Accumulating on top of a gradient that an
    /// optimizer step already consumed is a bug; debug builds panic on it.
    pub fn accumulate(&mut self, g: ArrayView2<'_, f64>) -> Result<()> {
        if g.dim() != self.value.dim() {
            return Err(RacError::input(format!(
                "gradient of shape {:?} for parameter `{}` of shape {:?}",
                g.dim(),
                self.name,
                self.value.dim()
            )));
        }
        self.grad_mut().zip_mut_with(&g, |a, &b| *a += b);
        Ok(())
    }

    /// Direct access for scatter-style backward passes.
    pub fn grad_mut(&mut self) -> &mut Array2<f64> {
        debug_assert!(
            !self.stepped,
            "gradient of `{}` accumulated across an optimizer step without zero_grad",
            self.name
        );
        &mut self.grad
    }

    pub(crate) fn mark_stepped(&mut self) {
        self.stepped = true;
    }
}
