use alloc::format;
use alloc::vec::Vec;

use crate::math::{exp, ln};
use crate::{Error, Result, Tensor};

/// Softmax followed by cross-entropy, averaged over the batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SoftmaxCrossEntropy {
    cache: Option<(Tensor, Vec<usize>)>,
}

impl SoftmaxCrossEntropy {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mean loss of `[m, classes]` logits against `labels`.
    pub fn forward(&mut self, logits: &Tensor, labels: &[usize]) -> Result<f64> {
        let probs = softmax(logits)?;
        if labels.len() != probs.rows() {
            return Err(Error::shape(format!(
                "{} labels for {} rows of logits",
                labels.len(),
                probs.rows()
            )));
        }
        let classes = probs.cols();
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::shape(format!("label {y} >= {classes} classes")));
            }
            let p = probs.row(i)[y];
            // clamp underflow but let NaN through so divergence is visible
            loss -= ln(if p < f64::MIN_POSITIVE {
                f64::MIN_POSITIVE
            } else {
                p
            });
        }
        self.cache = Some((probs, labels.to_vec()));
        Ok(loss / labels.len() as f64)
    }

    /// Gradient of the mean loss with respect to the logits.
    pub fn backward(&self) -> Result<Tensor> {
        let (probs, labels) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::state("softmax cross-entropy backward without a forward"))?;
        let mut grad = probs.clone();
        let scale = 1.0 / labels.len() as f64;
        for (i, &y) in labels.iter().enumerate() {
            let row = grad.row_mut(i);
            row[y] -= 1.0;
            row.iter_mut().for_each(|g| *g *= scale);
        }
        Ok(grad)
    }
}

/// Row-wise softmax, shifted by the row maximum for stability.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.shape().len() != 2 {
        return Err(Error::shape("softmax expects [m, classes] logits"));
    }
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = exp(*v - max);
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn uniform_logits_give_ln2() {
        let mut l = SoftmaxCrossEntropy::new();
        let logits = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let loss = l.forward(&logits, &[0]).unwrap();
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-15);
        let g = l.backward().unwrap();
        assert_eq!(g.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn label_out_of_range() {
        let mut l = SoftmaxCrossEntropy::new();
        let logits = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(l.forward(&logits, &[2]).is_err());
        assert!(l.forward(&logits, &[0, 1]).is_err());
    }

    #[test]
    fn large_logits_stay_finite() {
        let mut l = SoftmaxCrossEntropy::new();
        let logits = Tensor::matrix(1, 3, vec![1000.0, -1000.0, 0.0]).unwrap();
        let loss = l.forward(&logits, &[1]).unwrap();
        assert!(loss.is_finite());
    }
}
