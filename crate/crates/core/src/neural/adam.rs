use serde::{Deserialize, Serialize};

use super::model::ModelCheckpoint;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// One bias-corrected Adam update of `model` in place.
pub fn adam_step(model: &mut ModelCheckpoint, grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    let n = model.params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::domain(format!(
            "adam shapes differ: {n} params, {} grads, {}/{} moments",
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    state.step += 1;
    let c1 = 1.0 - BETA1.powi(state.step as i32);
    let c2 = 1.0 - BETA2.powi(state.step as i32);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        model.params[i] -= lr * mhat / (vhat.sqrt() + EPS);
    }
    Ok(())
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}
