use alloc::format;
use alloc::vec::Vec;

use crate::{Error, LayerMode, Result, RngStream, Tensor};

/// Multiplicative uniform noise: Train maps `x -> x (1 + r)` with
/// `r ~ U(-beta, beta)` per element; Eval is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Uout {
    beta: f64,
    last_noise: Option<Vec<f64>>,
}

impl Uout {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::domain(format!("beta {beta} must lie in [0, 1]")));
        }
        Ok(Uout {
            beta,
            last_noise: None,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn last_noise(&self) -> Option<&[f64]> {
        self.last_noise.as_deref()
    }

    pub fn forward(&mut self, x: &Tensor, mode: LayerMode, rng: &mut RngStream) -> Tensor {
        match mode {
            LayerMode::Eval => {
                self.last_noise = None;
                x.clone()
            }
            LayerMode::Train => {
                let b = self.beta;
                let noise: Vec<f64> = (0..x.len()).map(|_| rng.uniform_in(-b, b)).collect();
                let out = scale_by(x, &noise);
                self.last_noise = Some(noise);
                out
            }
        }
    }

    /// Train-mode forward with caller-supplied noise `r`.
    pub fn forward_with_noise(&mut self, x: &Tensor, noise: &Tensor) -> Result<Tensor> {
        x.same_shape(noise, "uout noise")?;
        let out = scale_by(x, noise.data());
        self.last_noise = Some(noise.data().to_vec());
        Ok(out)
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        let noise = self
            .last_noise
            .as_ref()
            .ok_or_else(|| Error::state("uout backward without cached train-mode noise"))?;
        if noise.len() != grad_out.len() {
            return Err(Error::shape(format!(
                "uout backward: noise has {} elements, gradient {}",
                noise.len(),
                grad_out.len()
            )));
        }
        Ok(scale_by(grad_out, noise))
    }
}

fn scale_by(x: &Tensor, noise: &[f64]) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(noise)
        .map(|(v, r)| v * (1.0 + r))
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::StreamingMoments;
    use alloc::vec;

    #[test]
    fn zero_beta_and_eval_are_identity() {
        let x = Tensor::vector(vec![1.0, -4.0]).unwrap();
        let mut rng = RngStream::new(0, 0);
        let mut u = Uout::new(0.0).unwrap();
        assert_eq!(u.forward(&x, LayerMode::Train, &mut rng), x);
        let mut u = Uout::new(0.7).unwrap();
        assert_eq!(u.forward(&x, LayerMode::Eval, &mut rng), x);
    }

    #[test]
    fn rejects_beta_outside_unit_interval() {
        assert!(Uout::new(1.5).is_err());
        assert!(Uout::new(-0.1).is_err());
    }

    #[test]
    fn backward_direct_formula() {
        let mut u = Uout::new(0.5).unwrap();
        let x = Tensor::vector(vec![3.0]).unwrap();
        u.forward_with_noise(&x, &Tensor::vector(vec![-0.5]).unwrap())
            .unwrap();
        let g = u.backward(&Tensor::vector(vec![2.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[1.0]);
    }

    #[test]
    fn backward_with_zero_noise_passes_through() {
        let mut u = Uout::new(0.5).unwrap();
        let x = Tensor::vector(vec![3.0, 1.0]).unwrap();
        u.forward_with_noise(&x, &Tensor::zeros(vec![2]).unwrap())
            .unwrap();
        let g = Tensor::vector(vec![2.0, -7.0]).unwrap();
        assert_eq!(u.backward(&g).unwrap(), g);
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let u = Uout::new(0.5).unwrap();
        assert!(matches!(
            u.backward(&Tensor::vector(vec![1.0]).unwrap()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn train_variance_inflation() {
        let n = 1_000_000;
        let mut rng = RngStream::new(23, 0);
        let x: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let x = Tensor::vector(x).unwrap();
        let vin = StreamingMoments::from_slice(x.data())
            .variance_unbiased()
            .unwrap();
        let mut u = Uout::new(0.5).unwrap();
        let y = u.forward(&x, LayerMode::Train, &mut rng);
        let vout = StreamingMoments::from_slice(y.data())
            .variance_unbiased()
            .unwrap();
        let expected = (3.0 + 0.25) / 3.0;
        assert!((vout / vin - expected).abs() < 0.01, "ratio {}", vout / vin);
    }
}
