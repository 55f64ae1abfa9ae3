//! Numerics for studying the variance shift that appears when Dropout feeds
//! Batch Normalization.
//!
//! The crate is `no_std` (it needs `alloc`) and does no IO. It holds the
//! layers with exact train/eval semantics plus the closed-form and Monte
//! Carlo shift ratios they are measured against. Everything touching files
//! or threads lives in the `varshift` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analytic;
pub mod data;
pub mod diagnostics;
mod error;
pub mod experiment;
pub mod gradcheck;
pub mod layers;
pub mod montecarlo;
pub mod network;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use layers::LayerMode;
pub use rng::RngStream;
pub use stats::StreamingMoments;
pub use tensor::Tensor;

pub(crate) mod math {
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }

    #[inline]
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }

    #[inline]
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }
}
