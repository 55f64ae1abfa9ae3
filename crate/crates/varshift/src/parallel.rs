//! Multi-threaded Monte Carlo drivers. Each batch and each scenario draws
//! from its own substream, so results match the sequential drivers bit for
//! bit.

use rayon::prelude::*;
use varshift_core::analytic::ShiftScenario;
use varshift_core::montecarlo::{
    batch_sizes, combine, sweep_row, BatchMoments, McModel, McShift, SweepRow, DEFAULT_BATCHES,
    MIN_SAMPLES,
};
use varshift_core::{Error, Result, RngStream};

/// Parallel counterpart of `montecarlo::estimate`.
pub fn par_estimate(model: &McModel, n: usize, rng: &RngStream) -> Result<McShift> {
    model.validate()?;
    if n < MIN_SAMPLES {
        return Err(Error::Domain(format!(
            "{n} samples is below the minimum of {MIN_SAMPLES}"
        )));
    }
    let batches: Vec<BatchMoments> = batch_sizes(n, DEFAULT_BATCHES)
        .into_par_iter()
        .enumerate()
        .map(|(b, size)| model.run_batch(size, &mut rng.substream(b as u64)))
        .collect();
    combine(&batches)
}

/// Parallel counterpart of `montecarlo::mc_grid_sweep`.
pub fn par_sweep(scenarios: &[ShiftScenario], n: usize, rng: &RngStream) -> Result<Vec<SweepRow>> {
    if scenarios.is_empty() {
        return Err(Error::Empty("scenario list".into()));
    }
    Ok(scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| sweep_row(i, s, n, rng))
        .collect())
}
