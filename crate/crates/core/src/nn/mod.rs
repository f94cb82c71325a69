//! Differentiable layer primitives with hand-written adjoints.
//!
//! Every layer caches what its backward pass needs during `forward`;
//! calling `backward` first is a usage error. A layer instance is
//! single-writer: forward/backward/update must be serialized by the
//! caller. Frozen inference-only networks are safe to share immutably.

pub mod concat;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod loss;
pub mod lrn;
pub mod pool;
pub mod relu;
pub mod tensor;

pub use concat::{concat_channels, split_channels};
pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use loss::{softmax_cross_entropy, LossValue};
pub use lrn::Lrn;
pub use pool::{GlobalAvgPool, MaxPool2d};
pub use relu::Relu;
pub use tensor::{Element, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    /// Structural mismatch between tensor shapes or layer geometry.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// API misuse, e.g. backward before forward.
    #[error("usage error: {0}")]
    Usage(String),
    /// Invalid layer configuration value.
    #[error("configuration error: {0}")]
    Config(String),
    /// Invalid runtime input (targets, scores, ...).
    #[error("validation error: {0}")]
    Validation(String),
}

/// Whether a forward pass trains (dropout active) or infers (identity).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

/// Weights plus bias, with gradient accumulators and momentum buffers of
/// identical shapes.
#[derive(Clone, Debug)]
pub struct LayerParams<E: Element = f32> {
    pub weights: Tensor<E>,
    pub bias: Tensor<E>,
    pub weight_grad: Tensor<E>,
    pub bias_grad: Tensor<E>,
    pub weight_velocity: Tensor<E>,
    pub bias_velocity: Tensor<E>,
}

impl<E: Element> LayerParams<E> {
    pub fn new(weights: Tensor<E>, bias: Tensor<E>) -> Self {
        let weight_grad = Tensor::zeros(weights.shape().to_vec());
        let bias_grad = Tensor::zeros(bias.shape().to_vec());
        let weight_velocity = Tensor::zeros(weights.shape().to_vec());
        let bias_velocity = Tensor::zeros(bias.shape().to_vec());
        Self {
            weights,
            bias,
            weight_grad,
            bias_grad,
            weight_velocity,
            bias_velocity,
        }
    }

    pub fn zero_grads(&mut self) {
        self.weight_grad.data_mut().fill(E::ZERO);
        self.bias_grad.data_mut().fill(E::ZERO);
    }

    pub fn scalar_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Fixed image-chunk size for batch reductions. Partial gradients are
/// computed per chunk and combined in chunk order, so sums do not depend
/// on how many worker threads run.
pub(crate) const REDUCE_CHUNK: usize = 8;
