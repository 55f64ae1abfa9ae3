use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;
use crate::stats::{batch_moments, AveragePolicy, RunningStats};
use crate::{Error, LayerMode, Result, Tensor};

/// Optional per-channel scale and shift applied after normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    grad_gamma: Vec<f64>,
    grad_beta: Vec<f64>,
}

impl Affine {
    pub fn new(gamma: Vec<f64>, beta: Vec<f64>) -> Self {
        let d = gamma.len();
        Affine {
            gamma,
            beta,
            grad_gamma: vec![0.0; d],
            grad_beta: vec![0.0; d],
        }
    }

    pub fn grad_gamma(&self) -> &[f64] {
        &self.grad_gamma
    }

    pub fn grad_beta(&self) -> &[f64] {
        &self.grad_beta
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Cache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    rows: usize,
}

/// Batch normalization over the rows of a `[m, d]` batch.
///
/// Train normalizes by the batch mean and biased variance, then folds the
/// batch mean and the unbiased variance `m/(m-1) sigma^2` into the running
/// statistics. Eval normalizes by the running statistics only and leaves
/// all state untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    stats: RunningStats,
    epsilon: f64,
    affine: Option<Affine>,
    cache: Option<Cache>,
}

impl BatchNorm {
    pub const DEFAULT_EPSILON: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Result<Self> {
        BatchNorm::with_options(
            channels,
            AveragePolicy::Exponential {
                momentum: Self::DEFAULT_MOMENTUM,
            },
            Self::DEFAULT_EPSILON,
            false,
        )
    }

    pub fn with_options(
        channels: usize,
        policy: AveragePolicy,
        epsilon: f64,
        affine: bool,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::shape("batch norm needs at least one channel"));
        }
        if let AveragePolicy::Exponential { momentum } = policy {
            if !(momentum > 0.0 && momentum <= 1.0) {
                return Err(Error::domain(format!(
                    "momentum {momentum} must lie in (0, 1]"
                )));
            }
        }
        if epsilon <= 0.0 || epsilon.is_nan() {
            return Err(Error::domain(format!("epsilon {epsilon} must be positive")));
        }
        Ok(BatchNorm {
            stats: RunningStats::new(channels, policy),
            epsilon,
            affine: affine.then(|| Affine::new(vec![1.0; channels], vec![0.0; channels])),
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.stats.channels()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn running(&self) -> &RunningStats {
        &self.stats
    }

    /// Direct access to the moving statistics, for recalibration.
    pub fn running_mut(&mut self) -> &mut RunningStats {
        &mut self.stats
    }

    pub fn moving_mean(&self) -> &[f64] {
        &self.stats.mean
    }

    pub fn moving_var(&self) -> &[f64] {
        &self.stats.var
    }

    pub fn set_moving(&mut self, mean: Vec<f64>, var: Vec<f64>) -> Result<()> {
        let d = self.channels();
        if mean.len() != d || var.len() != d {
            return Err(Error::shape(
                "moving statistics length differs from channel count",
            ));
        }
        if var.iter().any(|v| *v < 0.0 || v.is_nan()) {
            return Err(Error::domain("moving variance must be non-negative"));
        }
        self.stats.mean = mean;
        self.stats.var = var;
        Ok(())
    }

    pub fn affine(&self) -> Option<&Affine> {
        self.affine.as_ref()
    }

    pub fn affine_mut(&mut self) -> Option<&mut Affine> {
        self.affine.as_mut()
    }

    pub fn forward(&mut self, x: &Tensor, mode: LayerMode) -> Result<Tensor> {
        let d = self.channels();
        let m = x.expect_matrix(d, "batch norm forward")?;
        match mode {
            LayerMode::Eval => {
                self.cache = None;
                let inv_std: Vec<f64> = self
                    .stats
                    .var
                    .iter()
                    .map(|v| 1.0 / sqrt(v + self.epsilon))
                    .collect();
                let mut out = x.data().to_vec();
                for row in out.chunks_exact_mut(d) {
                    for ((y, mu), s) in row.iter_mut().zip(&self.stats.mean).zip(&inv_std) {
                        *y = (*y - mu) * s;
                    }
                }
                self.apply_affine(&mut out);
                Ok(Tensor::from_parts(vec![m, d], out))
            }
            LayerMode::Train => {
                if m < 2 {
                    return Err(Error::BatchSize(m));
                }
                let (mean, var) = batch_moments(m, d, x.data());
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / sqrt(v + self.epsilon)).collect();
                let mut xhat = x.data().to_vec();
                for row in xhat.chunks_exact_mut(d) {
                    for ((y, mu), s) in row.iter_mut().zip(&mean).zip(&inv_std) {
                        *y = (*y - mu) * s;
                    }
                }
                let correction = m as f64 / (m as f64 - 1.0);
                let unbiased: Vec<f64> = var.iter().map(|v| v * correction).collect();
                self.stats.update(&mean, &unbiased);
                let mut out = xhat.clone();
                self.apply_affine(&mut out);
                self.cache = Some(Cache {
                    xhat,
                    inv_std,
                    rows: m,
                });
                Ok(Tensor::from_parts(vec![m, d], out))
            }
        }
    }

    fn apply_affine(&self, out: &mut [f64]) {
        if let Some(a) = &self.affine {
            for row in out.chunks_exact_mut(a.gamma.len()) {
                for ((y, g), b) in row.iter_mut().zip(&a.gamma).zip(&a.beta) {
                    *y = *y * g + b;
                }
            }
        }
    }

    /// Exact gradient through the batch mean and variance.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let d = self.channels();
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::state("batch norm backward needs a preceding train-mode forward")
        })?;
        let m = grad_out.expect_matrix(d, "batch norm backward")?;
        if m != cache.rows {
            return Err(Error::shape(format!(
                "batch norm backward: gradient has {m} rows, forward had {}",
                cache.rows
            )));
        }
        let mut dxhat = grad_out.data().to_vec();
        if let Some(a) = &mut self.affine {
            a.grad_gamma.iter_mut().for_each(|g| *g = 0.0);
            a.grad_beta.iter_mut().for_each(|g| *g = 0.0);
            for (grow, xrow) in grad_out
                .data()
                .chunks_exact(d)
                .zip(cache.xhat.chunks_exact(d))
            {
                for c in 0..d {
                    a.grad_gamma[c] += grow[c] * xrow[c];
                    a.grad_beta[c] += grow[c];
                }
            }
            for row in dxhat.chunks_exact_mut(d) {
                row.iter_mut().zip(&a.gamma).for_each(|(g, s)| *g *= s);
            }
        }
        let mut sum = vec![0.0; d];
        let mut sum_x = vec![0.0; d];
        for (grow, xrow) in dxhat.chunks_exact(d).zip(cache.xhat.chunks_exact(d)) {
            for c in 0..d {
                sum[c] += grow[c];
                sum_x[c] += grow[c] * xrow[c];
            }
        }
        let mf = m as f64;
        for (grow, xrow) in dxhat.chunks_exact_mut(d).zip(cache.xhat.chunks_exact(d)) {
            for c in 0..d {
                grow[c] = cache.inv_std[c] / mf * (mf * grow[c] - sum[c] - xrow[c] * sum_x[c]);
            }
        }
        Ok(Tensor::from_parts(vec![m, d], dxhat))
    }
}
