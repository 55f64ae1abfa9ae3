//! Closed-form variance of a unit before batch norm under Dropout/Uout, in
//! training and at inference, and their ratio.
//!
//! Two topologies are covered. In case (a) the stochastic layer feeds batch
//! norm directly, so the unit is `a x / p` in training and `x` at
//! inference. In case (b) it feeds a weighted sum `sum_i w_i a_i x_i / p`.
//! Inputs have mean `c` and variance `v`, with a common pairwise
//! correlation `rho_x`; the ratio reported everywhere is `Var_test / Var_train`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::sqrt;
use crate::{Error, Result};

/// Parameters of one variance-shift computation. Fields a formula does not
/// use keep their defaults (`d = 1`, `rho_x = 0`, `cos2theta = 1`,
/// `beta = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftScenario {
    pub c: f64,
    pub v: f64,
    pub retain_p: f64,
    pub d: usize,
    pub rho_x: f64,
    pub cos2theta: f64,
    pub beta: f64,
}

impl Default for ShiftScenario {
    fn default() -> Self {
        ShiftScenario {
            c: 0.0,
            v: 1.0,
            retain_p: 1.0,
            d: 1,
            rho_x: 0.0,
            cos2theta: 1.0,
            beta: 0.0,
        }
    }
}

impl ShiftScenario {
    /// Case (a) scenario with inputs of mean `c`, variance `v`.
    pub fn case_a(c: f64, v: f64, retain_p: f64) -> Self {
        ShiftScenario {
            c,
            v,
            retain_p,
            ..Default::default()
        }
    }

    /// Case (b) scenario with channel width `d`.
    pub fn case_b(c: f64, v: f64, retain_p: f64, d: usize, rho_x: f64, cos2theta: f64) -> Self {
        ShiftScenario {
            c,
            v,
            retain_p,
            d,
            rho_x,
            cos2theta,
            beta: 0.0,
        }
    }

    pub fn uout(v: f64, beta: f64) -> Self {
        ShiftScenario {
            v,
            beta,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ShiftScenario {
            c,
            v,
            retain_p,
            d,
            rho_x,
            cos2theta,
            beta,
        } = *self;
        if !c.is_finite() {
            return Err(Error::domain("mean c must be finite"));
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::domain(format!("variance v = {v} must be positive")));
        }
        if !(retain_p > 0.0 && retain_p <= 1.0) {
            return Err(Error::domain(format!(
                "retain probability {retain_p} must lie in (0, 1]"
            )));
        }
        if d == 0 {
            return Err(Error::domain("width d must be at least 1"));
        }
        if rho_x.is_nan() || !(0.0..=1.0).contains(&rho_x) {
            return Err(Error::UnsupportedCorrelation(rho_x));
        }
        if !(0.0..=1.0).contains(&cos2theta) {
            return Err(Error::domain(format!(
                "cos^2 theta = {cos2theta} must lie in [0, 1]"
            )));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::domain(format!("beta = {beta} must lie in [0, 1]")));
        }
        Ok(())
    }

    /// `d cos^2 theta`, the effective width of the weighted sum.
    pub fn effective_width(&self) -> f64 {
        self.d as f64 * self.cos2theta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftResult {
    pub var_train: f64,
    pub var_test: f64,
    /// `var_test / var_train`.
    pub ratio: f64,
}

impl ShiftResult {
    fn new(var_train: f64, var_test: f64) -> Self {
        ShiftResult {
            var_train,
            var_test,
            ratio: var_test / var_train,
        }
    }
}

/// `(1/p)(c^2 + v) - c^2`, the training variance of `a x / p`.
pub fn var_train_case_a(s: &ShiftScenario) -> Result<f64> {
    s.validate()?;
    Ok(train_scale(s))
}

fn train_scale(s: &ShiftScenario) -> f64 {
    // (c^2 + v)/p - c^2, rearranged to avoid cancellation near p = 1
    (s.c * s.c * (1.0 - s.retain_p) + s.v) / s.retain_p
}

/// Case (a): test variance `v` against training variance
/// `(1/p)(c^2 + v) - c^2`. Equals `p` when `c = 0`.
pub fn shift_ratio_case_a(s: &ShiftScenario) -> Result<ShiftResult> {
    s.validate()?;
    Ok(ShiftResult::new(train_scale(s), s.v))
}

/// Correlation of the masked inputs `a_i x_i`, which is `rho_x` scaled by
/// the case (a) ratio and therefore never larger than `rho_x`.
pub fn rho_ax_from_rho_x(s: &ShiftScenario) -> Result<f64> {
    s.validate()?;
    Ok(s.v / train_scale(s) * s.rho_x)
}

/// `(sum w_i^2, sum_{i != j} w_i w_j)`.
fn weight_sums(w: &[f64]) -> Result<(f64, f64)> {
    if w.iter().all(|x| *x == 0.0) {
        return Err(Error::DegenerateWeights);
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("weights must be finite"));
    }
    let sq: f64 = w.iter().map(|x| x * x).sum();
    let sum: f64 = w.iter().sum();
    Ok((sq, sum * sum - sq))
}

fn check_width(s: &ShiftScenario, w: &[f64]) -> Result<()> {
    if w.len() != s.d {
        return Err(Error::shape(format!(
            "weight vector has {} entries, scenario width is {}",
            w.len(),
            s.d
        )));
    }
    Ok(())
}

/// Training variance of `sum_i w_i a_i x_i / p`:
/// `((1/p)(c^2+v) - c^2) (sum w_i^2 + rho_ax sum_{i!=j} w_i w_j)`.
pub fn var_train_case_b(s: &ShiftScenario, w: &[f64]) -> Result<f64> {
    s.validate()?;
    check_width(s, w)?;
    let (sq, cross) = weight_sums(w)?;
    let rho_ax = s.v / train_scale(s) * s.rho_x;
    Ok(train_scale(s) * (sq + rho_ax * cross))
}

/// Inference variance of `sum_i w_i x_i`: `v (sum w_i^2 + rho_x sum_{i!=j} w_i w_j)`.
pub fn var_test_case_b(s: &ShiftScenario, w: &[f64]) -> Result<f64> {
    s.validate()?;
    check_width(s, w)?;
    let (sq, cross) = weight_sums(w)?;
    Ok(s.v * (sq + s.rho_x * cross))
}

/// Squared cosine between `w` and the all-ones vector,
/// `(sum w_i)^2 / (d sum w_i^2)`.
pub fn cos_sq_theta(w: &[f64]) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::domain("weight vector is empty"));
    }
    let (sq, cross) = weight_sums(w).map_err(|_| Error::domain("weight vector is all zeros"))?;
    let sum_sq = sq + cross;
    Ok((sum_sq / (w.len() as f64 * sq)).clamp(0.0, 1.0))
}

/// A unit-norm weight vector of width `d` whose squared cosine with the
/// all-ones vector is `cos2theta`. For `d = 1` only `cos2theta = 1` exists.
pub fn weights_with_cos2(d: usize, cos2theta: f64) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::domain("width must be at least 1"));
    }
    if !(0.0..=1.0).contains(&cos2theta) {
        return Err(Error::domain(format!(
            "cos^2 theta = {cos2theta} must lie in [0, 1]"
        )));
    }
    if d == 1 {
        if cos2theta != 1.0 {
            return Err(Error::domain(
                "a width-1 weight vector always has cos^2 theta = 1",
            ));
        }
        return Ok(vec![1.0]);
    }
    // a * ones/sqrt(d) + b * (e_1 - e_2)/sqrt(2), with a^2 = cos^2, a^2 + b^2 = 1
    let a = sqrt(cos2theta) / sqrt(d as f64);
    let b = sqrt(1.0 - cos2theta) / sqrt(2.0);
    let mut w = vec![a; d];
    w[0] += b;
    w[1] -= b;
    Ok(w)
}

/// Case (b) ratio in terms of the effective width `d cos^2 theta`:
///
/// `(v rho_x (d cos^2 - 1) + v) / (v rho_x (d cos^2 - 1) + (1/p)(c^2+v) - c^2)`.
///
/// Tends to 1 as `p -> 1` or, for `rho_x > 0`, as `d -> infinity`.
pub fn shift_ratio_case_b(s: &ShiftScenario) -> Result<ShiftResult> {
    s.validate()?;
    let cross = s.v * s.rho_x * (s.effective_width() - 1.0);
    let var_test = cross + s.v;
    let var_train = cross + train_scale(s);
    if var_train <= 0.0 || var_test <= 0.0 || var_train.is_nan() || var_test.is_nan() {
        return Err(Error::domain(format!(
            "variances ({var_test}, {var_train}) are not positive for this scenario"
        )));
    }
    Ok(ShiftResult::new(var_train, var_test))
}

/// Case (b) ratio computed from an explicit weight vector.
pub fn shift_ratio_case_b_weights(s: &ShiftScenario, w: &[f64]) -> Result<ShiftResult> {
    let var_train = var_train_case_b(s, w)?;
    let var_test = var_test_case_b(s, w)?;
    if var_train <= 0.0 || var_train.is_nan() {
        return Err(Error::DegenerateWeights);
    }
    Ok(ShiftResult::new(var_train, var_test))
}

/// Uout shift ratio `3 / (3 + beta^2)` for zero-mean inputs.
pub fn uout_shift_ratio(beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::domain(format!("beta = {beta} must lie in [0, 1]")));
    }
    Ok(3.0 / (3.0 + beta * beta))
}
