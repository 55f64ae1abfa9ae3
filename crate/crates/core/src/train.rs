//! Mini-batch SGD with momentum and step learning-rate decay.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::layers::SoftmaxCrossEntropy;
use crate::network::{argmax, Network};
use crate::{Error, LayerMode, Result, RngStream, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Epochs (0-based) at whose start the learning rate is multiplied by
    /// `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            decay_epochs: vec![15, 25],
            decay_factor: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::BatchSize(self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::domain("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::domain("weight decay must be non-negative"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return Err(Error::domain("decay factor must be positive"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let steps = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        let mut lr = self.learning_rate;
        for _ in 0..steps {
            lr *= self.decay_factor;
        }
        lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean cross-entropy over the epoch's batches.
    pub loss: f64,
    /// Train-mode accuracy over the batches as they were trained on.
    pub accuracy: f64,
}

/// Trains `net` in place. Stochastic layers and batch norm run in Train
/// mode; batch norm accumulates its moving statistics as a side effect.
pub fn train(net: &mut Network, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if cfg.epochs > 0 && data.len() < 2 {
        return Err(Error::Empty("training needs at least two samples".into()));
    }
    let root = RngStream::new(cfg.seed, 1);
    let mut velocity: Vec<Vec<f64>> = Vec::new();
    net.for_each_param(|p, _| velocity.push(vec![0.0; p.len()]));
    let mut loss_fn = SoftmaxCrossEntropy::new();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut order_rng = root.substream(2 * epoch as u64);
        let mut noise_rng = root.substream(2 * epoch as u64 + 1);
        let batches = data.batch_indices(cfg.batch_size, Some(&mut order_rng));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for idx in &batches {
            let (x, y) = data.gather(idx);
            let logits = net.forward(&x, LayerMode::Train, &mut noise_rng)?;
            let loss = loss_fn.forward(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss;
            correct += count_correct(&logits, &y);
            seen += y.len();
            net.backward(&loss_fn.backward()?)?;
            let mut k = 0;
            net.for_each_param(|p, g| {
                let v = &mut velocity[k];
                for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                    *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
                    *p -= lr * *v;
                }
                k += 1;
            });
        }
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            loss: loss_sum / batches.len().max(1) as f64,
            accuracy: correct as f64 / seen.max(1) as f64,
        };
        if !record.loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(record);
    }
    Ok(history)
}

pub(crate) fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| argmax(logits.row(*i)) == y)
        .count()
}

/// Predicted classes in Eval mode.
pub fn predict(net: &mut Network, x: &Tensor) -> Result<Vec<usize>> {
    let logits = net.eval_logits(x)?;
    Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
}

/// Eval-mode accuracy on `data`.
pub fn eval_accuracy(net: &mut Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("accuracy of an empty dataset".into()));
    }
    let logits = net.eval_logits(data.features())?;
    if logits.cols() != data.num_classes() {
        return Err(Error::shape(format!(
            "network has {} outputs for {} classes",
            logits.cols(),
            data.num_classes()
        )));
    }
    Ok(count_correct(&logits, data.labels()) as f64 / data.len() as f64)
}
