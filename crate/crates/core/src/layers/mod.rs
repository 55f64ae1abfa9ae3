//! Layers with explicit train/eval semantics and exact backward passes.
//!
//! Batches are `[m, d]` tensors, one sample per row. Every layer caches what
//! its backward pass needs during a Train-mode forward; an Eval-mode forward
//! clears that cache, so calling backward after it is a state error.

use serde::{Deserialize, Serialize};

mod batchnorm;
mod dense;
mod dropout;
mod relu;
mod softmax;
mod uout;

pub use batchnorm::{Affine, BatchNorm};
pub use dense::Dense;
pub use dropout::Dropout;
pub use relu::Relu;
pub use softmax::SoftmaxCrossEntropy;
pub use uout::Uout;

/// Selects the behavior of the stochastic and normalization layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerMode {
    Train,
    Eval,
}
