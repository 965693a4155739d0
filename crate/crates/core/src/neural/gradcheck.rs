use rand::seq::index;

use super::loss::{loss_and_grads, Batch};
use super::model::ModelCheckpoint;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

pub const STEP: f64 = 1e-5;
pub const MAX_PARAMS: usize = 50_000;
pub const FULL_CHECK_LIMIT: usize = 5_000;
pub const SUBSAMPLE: usize = 1_000;

/// Parameters compared by [`grad_check`]: all of them up to
/// [`FULL_CHECK_LIMIT`], otherwise a fixed-seed subsample of [`SUBSAMPLE`].
pub fn checked_indices(n: usize) -> Vec<usize> {
    if n <= FULL_CHECK_LIMIT {
        (0..n).collect()
    } else {
        let mut idx = index::sample(&mut stream(0, &[tag::GRAD_CHECK, n as u64]), n, SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Central-difference estimate of `d loss / d params[i]`.
pub fn numeric_grad(model: &ModelCheckpoint, batch: Batch<'_>, i: usize) -> Result<f64> {
    let mut m = model.clone();
    let orig = m.params[i];
    m.params[i] = orig + STEP;
    let up = loss_and_grads(&m, batch, false)?.loss;
    m.params[i] = orig - STEP;
    let down = loss_and_grads(&m, batch, false)?.loss;
    Ok((up - down) / (2.0 * STEP))
}

/// Below this magnitude a central difference at [`STEP`] is round-off.
pub const NOISE_FLOOR: f64 = 1e-9;

/// `|a − n| / max(1e-12, |a| + |n|)`, or the plain absolute difference when
/// both values are inside the finite-difference noise floor. Parameters a loss
/// is exactly invariant to (the reward bias under a pairwise loss, say) would
/// otherwise report a relative error of 1 from round-off alone.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if analytic.abs().max(numeric.abs()) < NOISE_FLOOR {
        return diff;
    }
    diff / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Largest relative error between backpropagated and finite-difference
/// gradients over the checked parameters.
pub fn grad_check(model: &ModelCheckpoint, batch: Batch<'_>) -> Result<f64> {
    let n = model.params.len();
    if n > MAX_PARAMS {
        return Err(Error::domain(format!("grad check is limited to {MAX_PARAMS} parameters, model has {n}")));
    }
    let analytic = loss_and_grads(model, batch, true)?.grads;
    let mut worst: f64 = 0.0;
    for i in checked_indices(n) {
        worst = worst.max(relative_error(analytic[i], numeric_grad(model, batch, i)?));
    }
    Ok(worst)
}
