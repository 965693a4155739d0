use rand::Rng;

use super::linalg::log_sum_exp;
use super::model::ModelCheckpoint;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::synthlang::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tokens: Vec<TokenId>,
    /// `ln p(token)` under the untempered model, one per sampled token.
    pub log_probs: Vec<f64>,
    /// False when generation stopped at `max_new` without emitting EOS.
    pub terminated: bool,
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from unnormalized log-weights `row / temperature` with
/// one uniform variate from `stream`.
pub fn draw(row: &[f64], temperature: f64, stream: &mut Stream) -> usize {
    let scaled: Vec<f64> = row.iter().map(|v| v / temperature).collect();
    let lse = log_sum_exp(&scaled);
    let u: f64 = stream.gen();
    let mut acc = 0.0;
    for (i, s) in scaled.iter().enumerate() {
        acc += (s - lse).exp();
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

/// Autoregressive sampling after `prompt` until EOS or `max_new` tokens.
/// Temperature 0 decodes greedily.
pub fn sample(
    model: &ModelCheckpoint,
    prompt: &[TokenId],
    temperature: f64,
    max_new: usize,
    eos: TokenId,
    stream: &mut Stream,
) -> Result<Sample> {
    if !(temperature >= 0.0) || !temperature.is_finite() {
        return Err(Error::domain(format!("temperature must be finite and >= 0, got {temperature}")));
    }
    if prompt.is_empty() {
        return Err(Error::domain("empty prompt"));
    }
    let budget = max_new.min(model.config.context_length.saturating_sub(prompt.len()));
    if prompt.len() > model.config.context_length {
        return Err(Error::domain("prompt exceeds context length"));
    }
    let mut dec = model.decoder();
    let mut logits = Vec::new();
    for &t in prompt {
        logits = dec.step(t)?;
    }
    let mut out = Sample { tokens: Vec::new(), log_probs: Vec::new(), terminated: false };
    for i in 0..budget {
        let next = if temperature == 0.0 { argmax(&logits) } else { draw(&logits, temperature, stream) } as TokenId;
        out.log_probs.push(logits[next as usize] - log_sum_exp(&logits));
        out.tokens.push(next);
        if next == eos {
            out.terminated = true;
            break;
        }
        if i + 1 < budget {
            logits = dec.step(next)?;
        }
    }
    Ok(out)
}

/// Greedy continuation of `prompt`.
pub fn greedy(model: &ModelCheckpoint, prompt: &[TokenId], max_new: usize, eos: TokenId) -> Result<Sample> {
    // the stream is never consulted at temperature 0
    sample(model, prompt, 0.0, max_new, eos, &mut crate::rng::stream(0, &[]))
}
