use alloc::format;
use alloc::vec::Vec;

use crate::{Error, LayerMode, Result, RngStream, Tensor};

/// Inverted dropout parameterized by the retain probability `p`.
///
/// Train: `x_k -> a_k x_k / p` with a fresh Bernoulli(`p`) mask per call.
/// Eval: identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    retain_p: f64,
    last_mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(retain_p: f64) -> Result<Self> {
        if !(retain_p > 0.0 && retain_p <= 1.0) {
            return Err(Error::domain(format!(
                "retain probability {retain_p} must lie in (0, 1]"
            )));
        }
        Ok(Dropout {
            retain_p,
            last_mask: None,
        })
    }

    /// Builds from the user-facing drop ratio `1 - p`.
    pub fn from_drop_ratio(drop_ratio: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&drop_ratio) {
            return Err(Error::domain(format!(
                "drop ratio {drop_ratio} must lie in [0, 1)"
            )));
        }
        Dropout::new(1.0 - drop_ratio)
    }

    pub fn retain_p(&self) -> f64 {
        self.retain_p
    }

    pub fn drop_ratio(&self) -> f64 {
        1.0 - self.retain_p
    }

    pub fn last_mask(&self) -> Option<&[f64]> {
        self.last_mask.as_deref()
    }

    pub fn forward(&mut self, x: &Tensor, mode: LayerMode, rng: &mut RngStream) -> Tensor {
        match mode {
            LayerMode::Eval => {
                self.last_mask = None;
                x.clone()
            }
            LayerMode::Train => {
                let p = self.retain_p;
                let mask: Vec<f64> = (0..x.len())
                    .map(|_| if rng.bernoulli(p) { 1.0 } else { 0.0 })
                    .collect();
                let out = apply_mask(x, &mask, p);
                self.last_mask = Some(mask);
                out
            }
        }
    }

    /// Train-mode forward with a caller-supplied mask of zeros and ones.
    pub fn forward_with_mask(&mut self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        x.same_shape(mask, "dropout mask")?;
        let out = apply_mask(x, mask.data(), self.retain_p);
        self.last_mask = Some(mask.data().to_vec());
        Ok(out)
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = self
            .last_mask
            .as_ref()
            .ok_or_else(|| Error::state("dropout backward without a cached train-mode mask"))?;
        if mask.len() != grad_out.len() {
            return Err(Error::shape(format!(
                "dropout backward: mask has {} elements, gradient {}",
                mask.len(),
                grad_out.len()
            )));
        }
        Ok(apply_mask(grad_out, mask, self.retain_p))
    }
}

fn apply_mask(x: &Tensor, mask: &[f64], p: f64) -> Tensor {
    let scale = 1.0 / p;
    let data = x
        .data()
        .iter()
        .zip(mask)
        .map(|(v, a)| a * v * scale)
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}
