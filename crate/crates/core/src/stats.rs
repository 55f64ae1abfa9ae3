//! Single-pass moments and the running averages used by batch norm.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Running mean and sum of squared deviations of a stream of samples.
///
/// Updated with Welford's recurrence; two accumulators merge with the
/// pairwise formula of Chan et al., so work split across workers can be
/// combined without revisiting samples.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StreamingMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl StreamingMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut m = Self::new();
        for &x in xs {
            m.push(x);
        }
        m
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Value-returning form of [`push`](Self::push).
    pub fn update(mut self, x: f64) -> Self {
        self.push(x);
        self
    }

    pub fn merge(&self, other: &StreamingMoments) -> StreamingMoments {
        if other.count == 0 {
            return *self;
        }
        if self.count == 0 {
            return *other;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let weight = other.count as f64 / count as f64;
        StreamingMoments {
            count,
            mean: self.mean + delta * weight,
            m2: self.m2 + other.m2 + delta * delta * self.count as f64 * weight,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// `m2 / count`; `None` when empty.
    pub fn variance_biased(&self) -> Option<f64> {
        (self.count >= 1).then(|| self.m2 / self.count as f64)
    }

    /// `m2 / (count - 1)`; `None` below two samples.
    pub fn variance_unbiased(&self) -> Option<f64> {
        (self.count >= 2).then(|| self.m2 / (self.count - 1) as f64)
    }
}

/// How a [`RunningStats`] folds each new batch statistic in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AveragePolicy {
    /// `running <- (1 - momentum) * running + momentum * batch`.
    Exponential { momentum: f64 },
    /// Exact arithmetic mean of every batch statistic seen so far.
    Cumulative,
}

impl Default for AveragePolicy {
    fn default() -> Self {
        AveragePolicy::Exponential { momentum: 0.1 }
    }
}

/// Per-channel running mean and running unbiased variance.
///
/// Starts from mean 0 and variance 1 like a freshly built batch norm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub policy: AveragePolicy,
    pub updates: u64,
}

impl RunningStats {
    pub fn new(channels: usize, policy: AveragePolicy) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            policy,
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Folds in one batch's per-channel mean and unbiased variance.
    pub fn update(&mut self, batch_mean: &[f64], batch_unbiased_var: &[f64]) {
        debug_assert_eq!(batch_mean.len(), self.channels());
        debug_assert_eq!(batch_unbiased_var.len(), self.channels());
        self.updates += 1;
        let w = match self.policy {
            AveragePolicy::Exponential { momentum } => momentum,
            AveragePolicy::Cumulative => 1.0 / self.updates as f64,
        };
        for (r, &b) in self.mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - w) * *r + w * b;
        }
        for (r, &b) in self.var.iter_mut().zip(batch_unbiased_var) {
            *r = ((1.0 - w) * *r + w * b).max(0.0);
        }
    }

    /// Per-channel batch mean and unbiased variance of a `[m, channels]`
    /// row-major batch, folded in. Requires `m >= 2`.
    pub fn observe_batch(&mut self, rows: usize, data: &[f64]) {
        let (mean, var) = batch_moments(rows, self.channels(), data);
        let scale = rows as f64 / (rows as f64 - 1.0);
        let unbiased: Vec<f64> = var.iter().map(|v| v * scale).collect();
        self.update(&mean, &unbiased);
    }

    /// Arithmetic mean of the per-channel running variance.
    pub fn mean_var(&self) -> f64 {
        self.var.iter().sum::<f64>() / self.var.len() as f64
    }
}

/// Per-channel mean and biased variance of a `[rows, channels]` batch.
pub(crate) fn batch_moments(rows: usize, channels: usize, data: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; channels];
    for r in 0..rows {
        for (m, x) in mean.iter_mut().zip(&data[r * channels..(r + 1) * channels]) {
            *m += x;
        }
    }
    let inv = 1.0 / rows as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let mut var = vec![0.0; channels];
    for r in 0..rows {
        for ((v, x), m) in var
            .iter_mut()
            .zip(&data[r * channels..(r + 1) * channels])
            .zip(&mean)
        {
            let d = x - m;
            *v += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v *= inv);
    (mean, var)
}
