//! Layers with analytic gradients over channel-last tensors.
//!
//! Every layer is a pair of free functions: a forward pass that returns the
//! output (and whatever the backward pass needs) and a backward pass that
//! maps an output gradient to input and parameter gradients. Batch-level
//! parameter gradients are accumulated in sample order so results do not
//! depend on the number of worker threads.

pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
pub mod pool;

use thiserror::Error;

use crate::tensor::{Element, ShapeError, Tensor};

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNormCache};
pub use conv::{conv2d, conv2d_backward};
pub use dense::{dense, dense_backward};
pub use dropout::{dropout, dropout_backward};
pub use loss::{softmax, softmax_cross_entropy};
pub use lstm::{bilstm, bilstm_backward, LstmWeights};
pub use pool::{maxpool2d, maxpool2d_backward};

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Training enables dropout and batch statistics; inference uses neither.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the forward output was positive.
pub fn relu_backward<T: Element>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    grad_out.expect_shape("relu grad_out", output.shape())?;
    let d = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Ok(Tensor::from_vec(output.shape(), d)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps() {
        let x = Tensor::<f64>::from_vec(&[4], vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 0.5, 2.0]);
        let g = relu_backward(&y, &Tensor::full(&[4], 3.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 3.0, 3.0]);
    }
}
