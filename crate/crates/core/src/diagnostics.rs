//! Measuring and repairing the variance shift on trained networks.
//!
//! Every routine takes the network by shared reference and works on a copy,
//! so the caller's network is never touched. Batch norm inputs are observed
//! through [`Network::forward_tapped`]; no layer math is duplicated here.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::network::{argmax, Network};
use crate::stats::{AveragePolicy, RunningStats};
use crate::train::count_correct;
use crate::{Error, LayerMode, Result, RngStream, Tensor};

pub const DEFAULT_PASSES: usize = 10;
pub const DEFAULT_VOTES: usize = 8;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_VOTE_BATCH_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerShift {
    /// 1-based batch norm index, shallow to deep.
    pub layer: usize,
    pub moving_var: f64,
    pub real_var: f64,
    pub max_ratio: f64,
}

impl LayerShift {
    pub fn new(layer: usize, moving_var: f64, real_var: f64) -> Self {
        let max_ratio = if moving_var > 0.0 && real_var > 0.0 {
            (real_var / moving_var).max(moving_var / real_var)
        } else if moving_var == real_var {
            1.0
        } else {
            f64::INFINITY
        };
        LayerShift {
            layer,
            moving_var,
            real_var,
            max_ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    /// Accuracy of the per-sample majority vote over Train-mode passes.
    pub train_mode_acc: f64,
    pub eval_mode_acc: f64,
    /// Fraction of samples right under the vote but wrong under Eval.
    pub flip_rate: f64,
    /// Mean accuracy of the individual Train-mode passes.
    pub single_pass_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub layers: Vec<LayerShift>,
    pub consistency: Option<Consistency>,
}

impl ShiftReport {
    pub fn max_ratios(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.max_ratio).collect()
    }

    /// Geometric mean of the per-layer max ratios.
    pub fn geometric_mean_max_ratio(&self) -> f64 {
        if self.layers.is_empty() {
            return f64::NAN;
        }
        let log_sum: f64 = self.layers.iter().map(|l| libm::log(l.max_ratio)).sum();
        libm::exp(log_sum / self.layers.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamOptions {
    /// Epochs over the data.
    pub passes: usize,
    pub batch_size: usize,
    /// Averaging rule for the accumulated statistics; `None` reuses each
    /// batch norm layer's own rule.
    pub policy: Option<AveragePolicy>,
}

impl Default for StreamOptions {
    fn default() -> Self {
        StreamOptions {
            passes: DEFAULT_PASSES,
            batch_size: DEFAULT_BATCH_SIZE,
            policy: None,
        }
    }
}

impl StreamOptions {
    pub fn with_passes(passes: usize) -> Self {
        StreamOptions {
            passes,
            ..Default::default()
        }
    }

    /// Defaults for [`adjust_bn_statistics`]: an exact cumulative average.
    pub fn adjustment() -> Self {
        StreamOptions {
            policy: Some(AveragePolicy::Cumulative),
            ..Default::default()
        }
    }
}

fn check_trained(net: &Network) -> Result<()> {
    let mut any = false;
    for (i, bn) in net.batch_norms().enumerate() {
        any = true;
        if bn.running().updates == 0 {
            return Err(Error::state(alloc::format!(
                "batch norm layer {} has never been trained",
                i + 1
            )));
        }
    }
    if any {
        Ok(())
    } else {
        Err(Error::NoBatchNorm)
    }
}

fn check_stream(data: &Dataset, opts: &StreamOptions) -> Result<()> {
    if opts.batch_size < 2 {
        return Err(Error::BatchSize(opts.batch_size));
    }
    if data.len() < 2 {
        return Err(Error::Empty("need at least two samples".into()));
    }
    Ok(())
}

/// Runs `net` in Eval mode over `passes` shuffled epochs of `data`, calling
/// `tap` before every batch norm layer.
fn stream_eval(
    net: &mut Network,
    data: &Dataset,
    opts: &StreamOptions,
    rng: &RngStream,
    tap: &mut dyn FnMut(usize, &Tensor, &mut crate::layers::BatchNorm),
) -> Result<()> {
    let mut noise = rng.substream(u64::MAX);
    for pass in 0..opts.passes {
        let mut order_rng = rng.substream(pass as u64);
        for idx in data.batch_indices(opts.batch_size, Some(&mut order_rng)) {
            let (x, _) = data.gather(&idx);
            net.forward_tapped(&x, LayerMode::Eval, &mut noise, tap)?;
        }
    }
    Ok(())
}

/// Compares each batch norm layer's moving variance with the variance its
/// input actually has in Eval mode, accumulated with the same averaging
/// rule over `opts.passes` epochs.
pub fn scan_variance_shift(
    net: &Network,
    data: &Dataset,
    opts: &StreamOptions,
    rng: &RngStream,
) -> Result<ShiftReport> {
    check_trained(net)?;
    check_stream(data, opts)?;
    let mut work = net.clone();
    let mut real: Vec<RunningStats> = net
        .batch_norms()
        .map(|bn| RunningStats::new(bn.channels(), opts.policy.unwrap_or(bn.running().policy)))
        .collect();
    stream_eval(&mut work, data, opts, rng, &mut |i, h, _| {
        real[i].observe_batch(h.rows(), h.data());
    })?;
    let layers = net
        .batch_norms()
        .zip(&real)
        .enumerate()
        .map(|(i, (bn, r))| {
            let real_var = if r.updates == 0 {
                bn.running().mean_var()
            } else {
                r.mean_var()
            };
            LayerShift::new(i + 1, bn.running().mean_var(), real_var)
        })
        .collect();
    Ok(ShiftReport {
        layers,
        consistency: None,
    })
}

/// Re-estimates every batch norm layer's moving statistics from its Eval-mode
/// input over `opts.passes` epochs of `data`. Each layer's statistics are
/// restarted and updated right before it normalizes, so deeper layers see
/// the already adjusted upstream layers. Learnable parameters are copied
/// unchanged.
pub fn adjust_bn_statistics(
    net: &Network,
    data: &Dataset,
    opts: &StreamOptions,
    rng: &RngStream,
) -> Result<Network> {
    check_trained(net)?;
    if opts.passes == 0 {
        return Ok(net.clone());
    }
    check_stream(data, opts)?;
    let mut work = net.clone();
    for bn in work.batch_norms_mut() {
        let policy = opts.policy.unwrap_or(bn.running().policy);
        *bn.running_mut() = RunningStats::new(bn.channels(), policy);
    }
    stream_eval(&mut work, data, opts, rng, &mut |_, h, bn| {
        bn.running_mut().observe_batch(h.rows(), h.data());
    })?;
    // restore the original averaging rule for later training or scans
    for (bn, orig) in work.batch_norms_mut().zip(net.batch_norms()) {
        bn.running_mut().policy = orig.running().policy;
    }
    Ok(work)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteOptions {
    pub votes: usize,
    pub batch_size: usize,
}

impl Default for VoteOptions {
    fn default() -> Self {
        VoteOptions {
            votes: DEFAULT_VOTES,
            batch_size: DEFAULT_VOTE_BATCH_SIZE,
        }
    }
}

/// Train-mode logits for every sample of `data`, one tensor per pass, rows in
/// dataset order. Each pass shuffles the data into fresh batches so batch
/// norm sees batch statistics as it did during training.
fn train_mode_passes(
    net: &Network,
    data: &Dataset,
    opts: &VoteOptions,
    rng: &RngStream,
) -> Result<Vec<Tensor>> {
    if opts.batch_size < 2 {
        return Err(Error::BatchSize(opts.batch_size));
    }
    if opts.votes == 0 {
        return Err(Error::domain("need at least one Train-mode pass"));
    }
    let n = data.len();
    let classes = data.num_classes();
    let mut work = net.clone();
    let mut out = Vec::with_capacity(opts.votes);
    for pass in 0..opts.votes {
        let mut order_rng = rng.substream(2 * pass as u64);
        let mut noise = rng.substream(2 * pass as u64 + 1);
        let mut order: Vec<usize> = (0..n).collect();
        order_rng.shuffle(&mut order);
        let mut chunks: Vec<Vec<usize>> =
            order.chunks(opts.batch_size).map(|c| c.to_vec()).collect();
        // fold a trailing singleton into the previous batch
        if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 2) {
            let last = chunks.pop().unwrap_or_default();
            if let Some(prev) = chunks.last_mut() {
                prev.extend(last);
            }
        }
        let mut logits = vec![0.0; n * classes];
        for idx in &chunks {
            let (x, _) = data.gather(idx);
            let y = work.forward(&x, LayerMode::Train, &mut noise)?;
            if y.cols() != classes {
                return Err(Error::shape("network outputs do not match the class count"));
            }
            for (r, &i) in idx.iter().enumerate() {
                logits[i * classes..(i + 1) * classes].copy_from_slice(y.row(r));
            }
        }
        out.push(Tensor::new(vec![n, classes], logits)?);
    }
    Ok(out)
}

/// Train-mode majority vote against deterministic Eval predictions.
pub fn prediction_consistency(
    net: &Network,
    data: &Dataset,
    opts: &VoteOptions,
    rng: &RngStream,
) -> Result<Consistency> {
    if data.is_empty() {
        return Err(Error::Empty("consistency of an empty dataset".into()));
    }
    let n = data.len();
    let classes = data.num_classes();
    let passes = train_mode_passes(net, data, opts, rng)?;
    let mut counts = vec![0usize; n * classes];
    let mut single_correct = 0usize;
    for logits in &passes {
        single_correct += count_correct(logits, data.labels());
        for i in 0..n {
            counts[i * classes + argmax(logits.row(i))] += 1;
        }
    }
    let eval = net.clone().eval_logits(data.features())?;
    let (mut vote_ok, mut eval_ok, mut flips) = (0usize, 0usize, 0usize);
    for (i, &y) in data.labels().iter().enumerate() {
        let row = &counts[i * classes..(i + 1) * classes];
        // first maximum wins, so ties go to the lowest class
        let mut vote = 0;
        for (k, &c) in row.iter().enumerate() {
            if c > row[vote] {
                vote = k;
            }
        }
        let v = vote == y;
        let e = argmax(eval.row(i)) == y;
        vote_ok += usize::from(v);
        eval_ok += usize::from(e);
        flips += usize::from(v && !e);
    }
    Ok(Consistency {
        train_mode_acc: vote_ok as f64 / n as f64,
        eval_mode_acc: eval_ok as f64 / n as f64,
        flip_rate: flips as f64 / n as f64,
        single_pass_acc: single_correct as f64 / (n * passes.len()) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitDivergence {
    /// Mean Train-mode logits over the stochastic passes.
    pub train_logits: Vec<f64>,
    pub eval_logits: Vec<f64>,
    pub argmax_changed: bool,
}

/// Last-layer responses to `sample` in both modes. In Train mode the sample
/// is placed in a batch with `opts.batch_size - 1` rows drawn from
/// `context`, so batch norm has batch statistics to work with.
pub fn logit_divergence(
    net: &Network,
    sample: &[f64],
    context: &Dataset,
    opts: &VoteOptions,
    rng: &RngStream,
) -> Result<LogitDivergence> {
    if opts.batch_size < 2 {
        return Err(Error::BatchSize(opts.batch_size));
    }
    if context.is_empty() {
        return Err(Error::Empty(
            "logit divergence needs context samples".into(),
        ));
    }
    let d = sample.len();
    let x = Tensor::matrix(1, d, sample.to_vec())?;
    let mut work = net.clone();
    let eval_logits = work.eval_logits(&x)?.into_data();
    let mut train_logits = vec![0.0; eval_logits.len()];
    for pass in 0..opts.votes.max(1) {
        let mut pick = rng.substream(2 * pass as u64);
        let mut noise = rng.substream(2 * pass as u64 + 1);
        let idx: Vec<usize> = (1..opts.batch_size)
            .map(|_| pick.index(context.len()))
            .collect();
        let (ctx, _) = context.gather(&idx);
        let mut batch = sample.to_vec();
        batch.extend_from_slice(ctx.data());
        let xb = Tensor::matrix(opts.batch_size, d, batch)?;
        let y = work.forward(&xb, LayerMode::Train, &mut noise)?;
        train_logits
            .iter_mut()
            .zip(y.row(0))
            .for_each(|(t, v)| *t += v);
    }
    let passes = opts.votes.max(1) as f64;
    train_logits.iter_mut().for_each(|t| *t /= passes);
    let argmax_changed = argmax(&train_logits) != argmax(&eval_logits);
    Ok(LogitDivergence {
        train_logits,
        eval_logits,
        argmax_changed,
    })
}

/// Fraction of samples whose mean Train-mode logits and Eval logits pick
/// different classes, with every sample evaluated inside shuffled batches
/// of `data`.
pub fn argmax_change_rate(
    net: &Network,
    data: &Dataset,
    opts: &VoteOptions,
    rng: &RngStream,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty(
            "argmax change rate of an empty dataset".into(),
        ));
    }
    let passes = train_mode_passes(net, data, opts, rng)?;
    let eval = net.clone().eval_logits(data.features())?;
    let classes = data.num_classes();
    let mut mean = vec![0.0; classes];
    let mut changed = 0usize;
    for i in 0..data.len() {
        mean.iter_mut().for_each(|m| *m = 0.0);
        for p in &passes {
            mean.iter_mut().zip(p.row(i)).for_each(|(m, v)| *m += v);
        }
        changed += usize::from(argmax(&mean) != argmax(eval.row(i)));
    }
    Ok(changed as f64 / data.len() as f64)
}
