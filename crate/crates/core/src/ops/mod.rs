//! Differentiable neural-network primitives.
//!
//! Every op comes in a raw-tensor form (suffix `_t`) that takes plain
//! tensors, plus, where a parameter container exists, a bound form that
//! registers the container's [`Parameter`]s on the tape. All ops are pure
//! functions; they record themselves on the tape when any input is tracked.

mod conv;
mod elementwise;
mod matmul;
mod reduce;
mod resize;
mod shape;

pub use conv::{conv2d, conv2d_t};
pub use elementwise::{abs, add, add_broadcast, gelu, mul, scale, sub};
pub use matmul::{bmm, bmm_nt, matmul};
pub use reduce::{layer_norm, layer_norm_t, mean_all, softmax_last, sum_all};
pub use resize::{bilinear_upsample, pixel_shuffle, pixel_unshuffle};
pub use shape::{concat_last, gather, reshape, slice_last, weighted_gather};

use crate::error::{Error, Result};
use crate::tensor::{Element, Parameter, Tape, Tensor};

/// Fully connected layer weights: `weight` is `[in, out]`, bias `[out]`.
pub struct LinearParams<T: Element> {
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
}

impl<T: Element> LinearParams<T> {
    pub fn from_tensors(
        prefix: &str,
        weight: Tensor<T>,
        bias: Option<Tensor<T>>,
    ) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::shape(format!(
                "{prefix}: linear weight must be 2-d, got {:?}",
                weight.shape()
            )));
        }
        if let Some(b) = &bias {
            if b.shape() != [weight.shape()[1]] {
                return Err(Error::shape(format!(
                    "{prefix}: bias shape {:?} != [{}]",
                    b.shape(),
                    weight.shape()[1]
                )));
            }
        }
        Ok(LinearParams {
            weight: Parameter::new(format!("{prefix}.weight"), weight),
            bias: bias.map(|b| Parameter::new(format!("{prefix}.bias"), b)),
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Convolution weights: kernel is `[kh, kw, in, out]`, bias `[out]`.
pub struct ConvParams<T: Element> {
    pub kernel: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Element> ConvParams<T> {
    pub fn from_tensors(prefix: &str, kernel: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if kernel.shape().len() != 4 {
            return Err(Error::shape(format!(
                "{prefix}: conv kernel must be 4-d, got {:?}",
                kernel.shape()
            )));
        }
        if bias.shape() != [kernel.shape()[3]] {
            return Err(Error::shape(format!(
                "{prefix}: conv bias shape {:?} != [{}]",
                bias.shape(),
                kernel.shape()[3]
            )));
        }
        Ok(ConvParams {
            kernel: Parameter::new(format!("{prefix}.kernel"), kernel),
            bias: Parameter::new(format!("{prefix}.bias"), bias),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[3]
    }
}

/// Layer-norm affine pair over the trailing axis.
pub struct LayerNormParams<T: Element> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub eps: f64,
}

impl<T: Element> LayerNormParams<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn from_tensors(prefix: &str, gamma: Tensor<T>, beta: Tensor<T>) -> Result<Self> {
        if gamma.shape() != beta.shape() || gamma.shape().len() != 1 {
            return Err(Error::shape(format!(
                "{prefix}: layer-norm affine must be matching 1-d, got {:?} and {:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        Ok(LayerNormParams {
            gamma: Parameter::new(format!("{prefix}.gamma"), gamma),
            beta: Parameter::new(format!("{prefix}.beta"), beta),
            eps: Self::DEFAULT_EPS,
        })
    }

    /// Identity affine: gamma ones, beta zeros.
    pub fn identity(prefix: &str, dim: usize) -> Self {
        LayerNormParams {
            gamma: Parameter::new(format!("{prefix}.gamma"), Tensor::ones(&[dim])),
            beta: Parameter::new(format!("{prefix}.beta"), Tensor::zeros(&[dim])),
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.shape()[0]
    }
}

/// `y[..., j] = sum_i x[..., i] w[i, j] + b[j]`
pub fn linear<T: Element>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    p: &LinearParams<T>,
) -> Result<Tensor<T>> {
    let w = tape.parameter(&p.weight);
    let b = p.bias.as_ref().map(|b| tape.parameter(b));
    linear_t(tape, x, &w, b.as_ref())
}

pub fn linear_t<T: Element>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let y = matmul(tape, x, weight)?;
    match bias {
        Some(b) => add_broadcast(tape, &y, b),
        None => Ok(y),
    }
}
