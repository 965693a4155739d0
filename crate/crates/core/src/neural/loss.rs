//! Training objectives with exact reverse-mode gradients.

use serde::{Deserialize, Serialize};

use super::linalg::softmax;
use super::model::{ModelCheckpoint, OutputGrads};
use crate::error::{Error, Result};
use crate::synthlang::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Sft,
    Bt,
    PpoPolicy,
    PpoValue,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Sft, LossKind::Bt, LossKind::PpoPolicy, LossKind::PpoValue];
}

/// One sequence for the masked next-token objective.
#[derive(Debug, Clone, PartialEq)]
pub struct SftItem {
    pub tokens: Vec<TokenId>,
    /// `mask[t]` marks token `t` as a prediction target.
    pub mask: Vec<bool>,
}

/// Full `question ++ answer` sequences of a preference pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairItem {
    pub chosen: Vec<TokenId>,
    pub rejected: Vec<TokenId>,
}

/// A sampled answer: `tokens[start..]` are the answer tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyItem {
    pub tokens: Vec<TokenId>,
    pub start: usize,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueItem {
    pub tokens: Vec<TokenId>,
    pub start: usize,
    pub old_values: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum Batch<'a> {
    Sft(&'a [SftItem]),
    Bt(&'a [PairItem]),
    PpoPolicy { items: &'a [PolicyItem], clip: f64 },
    PpoValue { items: &'a [ValueItem], clip: f64 },
}

impl Batch<'_> {
    pub fn kind(&self) -> LossKind {
        match self {
            Batch::Sft(_) => LossKind::Sft,
            Batch::Bt(_) => LossKind::Bt,
            Batch::PpoPolicy { .. } => LossKind::PpoPolicy,
            Batch::PpoValue { .. } => LossKind::PpoValue,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Empty when gradients were not requested.
    pub grads: Vec<f64>,
    /// Per-token importance ratios, in batch order (policy loss only).
    pub ratios: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `−ln σ(margin)`, the Bradley-Terry loss of one pair.
pub fn bt_pair_loss(margin: f64) -> f64 {
    softplus(-margin)
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} is {v}")))
    }
}

fn check_answer_span(len: usize, start: usize, n: usize) -> Result<()> {
    if start == 0 || start > len || len - start != n {
        return Err(Error::domain(format!("answer span start {start} with {n} targets does not fit a sequence of {len}")));
    }
    Ok(())
}

/// `d(−ln softmax(row)[target]) / d row`, scaled.
fn nll_row_grad(row: &[f64], target: TokenId, scale: f64, out: &mut [f64]) {
    out.copy_from_slice(row);
    softmax(out);
    out[target as usize] -= 1.0;
    for g in out.iter_mut() {
        *g *= scale;
    }
}

/// Loss of `batch` under `model`, with parameter gradients when `want_grads`.
/// Terms are summed in batch order, so the result does not depend on scheduling.
pub fn loss_and_grads(model: &ModelCheckpoint, batch: Batch<'_>, want_grads: bool) -> Result<LossOutput> {
    let mut grads = if want_grads { vec![0.0; model.params.len()] } else { Vec::new() };
    let mut ratios = Vec::new();
    let vsz = model.config.vocab_size;
    let loss = match batch {
        Batch::Sft(items) => {
            let n: usize = items.iter().map(|it| it.mask.iter().skip(1).filter(|&&m| m).count()).sum();
            if n == 0 {
                return Err(Error::domain("sft batch has no target positions"));
            }
            let scale = 1.0 / n as f64;
            let mut total = 0.0;
            for it in items {
                if it.mask.len() != it.tokens.len() {
                    return Err(Error::domain("sft mask length differs from sequence length"));
                }
                let (out, trace) = model.forward_traced(&it.tokens)?;
                let mut dl = if want_grads { vec![0.0; it.tokens.len() * vsz] } else { Vec::new() };
                for t in 1..it.tokens.len() {
                    if !it.mask[t] {
                        continue;
                    }
                    total -= out.log_prob(t - 1, it.tokens[t]);
                    if want_grads {
                        nll_row_grad(out.logits_at(t - 1), it.tokens[t], scale, &mut dl[(t - 1) * vsz..t * vsz]);
                    }
                }
                if want_grads {
                    model.backward(&trace, &OutputGrads { logits: Some(&dl), ..Default::default() }, &mut grads);
                }
            }
            total * scale
        }
        Batch::Bt(items) => {
            if items.is_empty() {
                return Err(Error::domain("empty preference batch"));
            }
            let scale = 1.0 / items.len() as f64;
            let mut total = 0.0;
            for it in items {
                let (oc, tc) = model.forward_traced(&it.chosen)?;
                let (or, tr) = model.forward_traced(&it.rejected)?;
                let (rc, rr) = (reward_of(oc.reward)?, reward_of(or.reward)?);
                total += bt_pair_loss(rc - rr);
                if want_grads {
                    let g = sigmoid(rr - rc) * scale;
                    model.backward(&tc, &OutputGrads { reward: -g, ..Default::default() }, &mut grads);
                    model.backward(&tr, &OutputGrads { reward: g, ..Default::default() }, &mut grads);
                }
            }
            total * scale
        }
        Batch::PpoPolicy { items, clip } => {
            let n: usize = items.iter().map(|it| it.advantages.len()).sum();
            if n == 0 {
                return Err(Error::domain("empty policy batch"));
            }
            let scale = 1.0 / n as f64;
            let mut total = 0.0;
            for it in items {
                let len = it.tokens.len();
                check_answer_span(len, it.start, it.advantages.len())?;
                if it.old_log_probs.len() != it.advantages.len() {
                    return Err(Error::domain("policy item log-prob and advantage lengths differ"));
                }
                let (out, trace) = model.forward_traced(&it.tokens)?;
                let mut dl = if want_grads { vec![0.0; len * vsz] } else { Vec::new() };
                for (i, t) in (it.start..len).enumerate() {
                    let lp = out.log_prob(t - 1, it.tokens[t]);
                    let ratio = (lp - it.old_log_probs[i]).exp();
                    ratios.push(ratio);
                    let a = it.advantages[i];
                    let unclipped = ratio * a;
                    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * a;
                    total -= unclipped.min(clipped);
                    if want_grads && unclipped <= clipped {
                        // d(−ρA)/d ln p = −ρA
                        nll_row_grad(out.logits_at(t - 1), it.tokens[t], unclipped * scale, &mut dl[(t - 1) * vsz..t * vsz]);
                    }
                }
                if want_grads {
                    model.backward(&trace, &OutputGrads { logits: Some(&dl), ..Default::default() }, &mut grads);
                }
            }
            total * scale
        }
        Batch::PpoValue { items, clip } => {
            let n: usize = items.iter().map(|it| it.returns.len()).sum();
            if n == 0 {
                return Err(Error::domain("empty value batch"));
            }
            let scale = 1.0 / n as f64;
            let mut total = 0.0;
            for it in items {
                let len = it.tokens.len();
                check_answer_span(len, it.start, it.returns.len())?;
                if it.old_values.len() != it.returns.len() {
                    return Err(Error::domain("value item old-value and return lengths differ"));
                }
                let (out, trace) = model.forward_traced(&it.tokens)?;
                let values = out.values.as_ref().ok_or_else(|| Error::domain("value loss needs a value head"))?;
                let mut dv = vec![0.0; len];
                for (i, t) in (it.start..len).enumerate() {
                    let (v, old, ret) = (values[t - 1], it.old_values[i], it.returns[i]);
                    let delta = (v - old).clamp(-clip, clip);
                    let vc = old + delta;
                    let (lu, lc) = ((v - ret).powi(2), (vc - ret).powi(2));
                    total += 0.5 * lu.max(lc);
                    dv[t - 1] = if lu >= lc {
                        (v - ret) * scale
                    } else if (v - old).abs() < clip {
                        (vc - ret) * scale
                    } else {
                        0.0
                    };
                }
                if want_grads {
                    model.backward(&trace, &OutputGrads { values: Some(&dv), ..Default::default() }, &mut grads);
                }
            }
            total * scale
        }
    };
    let loss = finite(loss, &format!("{:?} loss", batch.kind()))?;
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("gradient of parameter {i} is {}", grads[i])));
    }
    Ok(LossOutput { loss, grads, ratios })
}

fn reward_of(r: Option<f64>) -> Result<f64> {
    let r = r.ok_or_else(|| Error::domain("preference loss needs a reward head"))?;
    finite(r, "reward")
}

/// Sum of `ln p(tokens[t] | tokens[..t])` for `t >= start`, per token.
pub fn sequence_log_probs(model: &ModelCheckpoint, tokens: &[TokenId], start: usize) -> Result<Vec<f64>> {
    let out = model.forward(tokens)?;
    Ok((start.max(1)..tokens.len()).map(|t| out.log_prob(t - 1, tokens[t])).collect())
}

/// Mean Bradley-Terry loss over precomputed reward pairs.
pub fn bt_loss_from_rewards(pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().map(|&(c, r)| bt_pair_loss(c - r)).sum::<f64>() / pairs.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::linalg::log_sum_exp;

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert!((bt_pair_loss(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(bt_pair_loss(800.0) >= 0.0 && bt_pair_loss(800.0) < 1e-300);
        assert!((bt_pair_loss(-800.0) - 800.0).abs() < 1e-9);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((log_sum_exp(&[0.0; 4]) - 4f64.ln()).abs() < 1e-15);
    }
}
