//! Monte Carlo oracles for the closed forms in [`crate::analytic`].
//!
//! Every estimator draws raw inputs, pushes them through the train-time and
//! test-time versions of the unit, and measures both variances. Samples are
//! split into [`DEFAULT_BATCHES`] batches; batch `b` draws from
//! `rng.substream(b)`, so batches can run on any number of workers and merge
//! to the same bits. Standard errors come from the spread of the per-batch
//! statistics (batch means).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::analytic::{self, ShiftScenario};
use crate::math::sqrt;
use crate::sampling::Equicorrelated;
use crate::{Error, Result, RngStream, StreamingMoments};

pub const DEFAULT_BATCHES: usize = 100;
pub const DEFAULT_SAMPLES: usize = 1_000_000;
pub const MIN_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: u64,
}

impl McEstimate {
    /// `(value - reference) / stderr`; 0 when both are exactly equal.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = self.value - reference;
        if diff == 0.0 {
            0.0
        } else {
            diff / self.stderr
        }
    }

    /// `|value - reference| <= k * stderr`.
    pub fn covers(&self, reference: f64, k: f64) -> bool {
        (self.value - reference).abs() <= k * self.stderr
    }
}

/// Both variance estimates with their ratio `test / train`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McShift {
    pub train: McEstimate,
    pub test: McEstimate,
    pub ratio: McEstimate,
}

/// Paired train/test moments of one batch of samples.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchMoments {
    pub train: StreamingMoments,
    pub test: StreamingMoments,
}

/// What a Monte Carlo run simulates.
#[derive(Debug, Clone, PartialEq)]
pub enum McModel {
    /// `a x / p` against `x`.
    CaseA(ShiftScenario),
    /// `sum w_i a_i x_i / p` against `sum w_i x_i` over equicorrelated `x`.
    CaseB(ShiftScenario, Vec<f64>),
    /// `x (1 + r)` against `x`, with `x ~ N(0, v)`.
    Uout { v: f64, beta: f64 },
}

impl McModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            McModel::CaseA(s) => s.validate(),
            McModel::CaseB(s, w) => {
                s.validate()?;
                if w.len() != s.d {
                    return Err(Error::shape(format!(
                        "weight vector has {} entries, scenario width is {}",
                        w.len(),
                        s.d
                    )));
                }
                if w.iter().all(|x| *x == 0.0) {
                    return Err(Error::DegenerateWeights);
                }
                Ok(())
            }
            McModel::Uout { v, beta } => ShiftScenario::uout(*v, *beta).validate(),
        }
    }

    /// Model used by the grid sweep for a bare scenario: Uout when `beta > 0`
    /// (which requires `c = 0`), case (a) when the scenario is one-dimensional,
    /// otherwise case (b) with a weight vector realising `cos2theta`.
    pub fn for_scenario(s: &ShiftScenario) -> Result<McModel> {
        s.validate()?;
        if s.beta > 0.0 {
            if s.c != 0.0 {
                return Err(Error::domain("the Uout ratio is only defined for c = 0"));
            }
            return Ok(McModel::Uout {
                v: s.v,
                beta: s.beta,
            });
        }
        if s.d == 1 {
            return Ok(McModel::CaseA(*s));
        }
        Ok(McModel::CaseB(
            *s,
            analytic::weights_with_cos2(s.d, s.cos2theta)?,
        ))
    }

    /// Closed-form ratio this model should reproduce.
    pub fn analytic_ratio(&self) -> Result<f64> {
        match self {
            McModel::CaseA(s) => Ok(analytic::shift_ratio_case_a(s)?.ratio),
            McModel::CaseB(s, w) => Ok(analytic::shift_ratio_case_b_weights(s, w)?.ratio),
            McModel::Uout { beta, .. } => analytic::uout_shift_ratio(*beta),
        }
    }

    /// Simulates `n` samples from `rng`.
    pub fn run_batch(&self, n: usize, rng: &mut RngStream) -> BatchMoments {
        let mut out = BatchMoments::default();
        match self {
            McModel::CaseA(s) => {
                let sd = sqrt(s.v);
                let scale = 1.0 / s.retain_p;
                for _ in 0..n {
                    let x = s.c + sd * rng.standard_normal();
                    let kept = rng.bernoulli(s.retain_p);
                    out.train.push(if kept { x * scale } else { 0.0 });
                    out.test.push(x);
                }
            }
            McModel::CaseB(s, w) => {
                // validated before any batch runs
                let dist = Equicorrelated::new(s.c, s.v, s.rho_x).expect("validated scenario");
                let scale = 1.0 / s.retain_p;
                let mut x = vec![0.0; w.len()];
                for _ in 0..n {
                    dist.fill(&mut x, rng);
                    let mut train = 0.0;
                    let mut test = 0.0;
                    for (wi, xi) in w.iter().zip(&x) {
                        let t = wi * xi;
                        test += t;
                        if rng.bernoulli(s.retain_p) {
                            train += t;
                        }
                    }
                    out.train.push(train * scale);
                    out.test.push(test);
                }
            }
            McModel::Uout { v, beta } => {
                let sd = sqrt(*v);
                for _ in 0..n {
                    let x = sd * rng.standard_normal();
                    let r = rng.uniform_in(-beta, *beta);
                    out.train.push(x * (1.0 + r));
                    out.test.push(x);
                }
            }
        }
        out
    }
}

/// Sizes of `batches` near-equal batches covering `n` samples.
pub fn batch_sizes(n: usize, batches: usize) -> Vec<usize> {
    let base = n / batches;
    let extra = n % batches;
    (0..batches)
        .map(|b| base + usize::from(b < extra))
        .collect()
}

fn check_count(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(Error::domain(format!(
            "{n} samples is below the minimum of {MIN_SAMPLES}"
        )));
    }
    Ok(())
}

/// Pools per-batch moments into estimates with batch-means standard errors.
pub fn combine(batches: &[BatchMoments]) -> Result<McShift> {
    if batches.len() < 2 {
        return Err(Error::domain(
            "batch-means errors need at least two batches",
        ));
    }
    let mut pooled = BatchMoments::default();
    let mut train_spread = StreamingMoments::new();
    let mut test_spread = StreamingMoments::new();
    let mut ratio_spread = StreamingMoments::new();
    for b in batches {
        pooled.train = pooled.train.merge(&b.train);
        pooled.test = pooled.test.merge(&b.test);
        let (tr, te) = match (b.train.variance_unbiased(), b.test.variance_unbiased()) {
            (Some(tr), Some(te)) => (tr, te),
            _ => return Err(Error::domain("every batch needs at least two samples")),
        };
        train_spread.push(tr);
        test_spread.push(te);
        ratio_spread.push(te / tr);
    }
    let k = batches.len() as f64;
    let se = |m: &StreamingMoments| sqrt(m.variance_unbiased().unwrap_or(0.0) / k);
    let n = pooled.train.count();
    let train = pooled.train.variance_unbiased().unwrap_or(0.0);
    let test = pooled.test.variance_unbiased().unwrap_or(0.0);
    Ok(McShift {
        train: McEstimate {
            value: train,
            stderr: se(&train_spread),
            n_samples: n,
        },
        test: McEstimate {
            value: test,
            stderr: se(&test_spread),
            n_samples: n,
        },
        ratio: McEstimate {
            value: test / train,
            stderr: se(&ratio_spread),
            n_samples: n,
        },
    })
}

/// Sequential driver: `n` samples in [`DEFAULT_BATCHES`] substreams.
pub fn estimate(model: &McModel, n: usize, rng: &RngStream) -> Result<McShift> {
    model.validate()?;
    check_count(n)?;
    let batches: Vec<BatchMoments> = batch_sizes(n, DEFAULT_BATCHES)
        .into_iter()
        .enumerate()
        .map(|(b, size)| model.run_batch(size, &mut rng.substream(b as u64)))
        .collect();
    combine(&batches)
}

/// Case (a): Dropout feeding batch norm directly.
pub fn mc_case_a(s: &ShiftScenario, n: usize, rng: &RngStream) -> Result<McShift> {
    estimate(&McModel::CaseA(*s), n, rng)
}

/// Case (b): Dropout feeding the weighted sum `w`.
pub fn mc_case_b(s: &ShiftScenario, w: &[f64], n: usize, rng: &RngStream) -> Result<McShift> {
    estimate(&McModel::CaseB(*s, w.to_vec()), n, rng)
}

/// Uout on zero-mean inputs of variance `v`; returns the ratio estimate.
pub fn mc_uout(v: f64, beta: f64, n: usize, rng: &RngStream) -> Result<McEstimate> {
    Ok(estimate(&McModel::Uout { v, beta }, n, rng)?.ratio)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario_id: usize,
    pub scenario: ShiftScenario,
    pub analytic: f64,
    pub mc: McEstimate,
    pub z: f64,
    /// Set when the scenario could not be evaluated; numeric fields are NaN.
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(scenario_id: usize, scenario: ShiftScenario, err: Error) -> Self {
        SweepRow {
            scenario_id,
            scenario,
            analytic: f64::NAN,
            mc: McEstimate {
                value: f64::NAN,
                stderr: f64::NAN,
                n_samples: 0,
            },
            z: f64::NAN,
            error: Some(err.to_string()),
        }
    }
}

/// Evaluates one sweep row; scenario `i` uses `rng.substream(i)`.
pub fn sweep_row(id: usize, s: &ShiftScenario, n: usize, rng: &RngStream) -> SweepRow {
    let run = || -> Result<(f64, McEstimate)> {
        let model = McModel::for_scenario(s)?;
        let analytic = model.analytic_ratio()?;
        let mc = estimate(&model, n, &rng.substream(id as u64))?.ratio;
        Ok((analytic, mc))
    };
    match run() {
        Ok((analytic, mc)) => SweepRow {
            scenario_id: id,
            scenario: *s,
            analytic,
            mc,
            z: mc.z_score(analytic),
            error: None,
        },
        Err(e) => SweepRow::failed(id, *s, e),
    }
}

/// Ratio estimate against its closed form for every scenario. Per-scenario
/// failures become rows with `error` set.
pub fn mc_grid_sweep(
    scenarios: &[ShiftScenario],
    n: usize,
    rng: &RngStream,
) -> Result<Vec<SweepRow>> {
    if scenarios.is_empty() {
        return Err(Error::Empty("scenario list".into()));
    }
    Ok(scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| sweep_row(i, s, n, rng))
        .collect())
}

/// The 15 case (a) scenarios: `p in {0.3, 0.5, 0.7, 0.9, 1.0}` crossed with
/// `(c, v) in {(0, 1), (1, 1), (2, 0.5)}`.
pub fn case_a_grid() -> Vec<ShiftScenario> {
    let mut out = Vec::new();
    for (c, v) in [(0.0, 1.0), (1.0, 1.0), (2.0, 0.5)] {
        for p in [0.3, 0.5, 0.7, 0.9, 1.0] {
            out.push(ShiftScenario::case_a(c, v, p));
        }
    }
    out
}

/// Case (b) scenarios with all-ones weights over `d in {1, 4, 16, 64, 256}`
/// and `rho_x in {0, 0.1, 0.5}` at the given `(c, v, p)`.
pub fn case_b_grid(c: f64, v: f64, retain_p: f64) -> Vec<ShiftScenario> {
    let mut out = Vec::new();
    for rho in [0.0, 0.1, 0.5] {
        for d in [1, 4, 16, 64, 256] {
            out.push(ShiftScenario::case_b(c, v, retain_p, d, rho, 1.0));
        }
    }
    out
}

/// Twenty scenarios: the case (a) grid, three case (b) widths and two Uout
/// rates.
pub fn default_sweep_grid() -> Vec<ShiftScenario> {
    let mut out = case_a_grid();
    out.push(ShiftScenario::case_b(0.0, 1.0, 0.5, 16, 0.1, 1.0));
    out.push(ShiftScenario::case_b(1.0, 1.0, 0.7, 64, 0.5, 0.25));
    out.push(ShiftScenario::case_b(0.0, 1.0, 0.5, 4, 0.5, 0.5));
    out.push(ShiftScenario::uout(1.0, 0.1));
    out.push(ShiftScenario::uout(1.0, 0.5));
    out
}

/// Human-readable summary of a failed row, for reports.
pub fn describe_failure(row: &SweepRow) -> Option<String> {
    row.error
        .as_ref()
        .map(|e| format!("scenario {}: {e}", row.scenario_id))
}
