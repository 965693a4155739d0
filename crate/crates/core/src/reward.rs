//! Bradley-Terry reward models over comparison pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{adam_step, loss_and_grads, AdamState, Batch, HeadSet, ModelCheckpoint, PairItem, Role};
use crate::pairs::{ComparisonPair, PairKind};
use crate::rng::{stream, tag};
use crate::sft::{epoch_batches, StepMetric, TrainOutcome};
use crate::synthlang::TokenId;

/// `exp(a) / (exp(a) + exp(b))` without overflow.
pub fn bt_prob(r_chosen: f64, r_rejected: f64) -> f64 {
    let m = r_chosen - r_rejected;
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmHyper {
    pub lr: f64,
    /// Pairs per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for RmHyper {
    fn default() -> Self {
        Self::for_role(Role::RewardLabel)
    }
}

impl RmHyper {
    /// One epoch for the label reward model, ten for the rationale one.
    pub fn for_role(role: Role) -> Self {
        let epochs = if role == Role::RewardRationale { 10 } else { 1 };
        Self { lr: 1e-4, batch_size: 4, epochs, seed: 0 }
    }
}

fn check_role(role: Role) -> Result<()> {
    match role {
        Role::RewardLabel | Role::RewardRationale => Ok(()),
        other => Err(Error::domain(format!("{} is not a reward-model role", other.name()))),
    }
}

/// The SFT trunk under a zero reward head.
pub fn reward_init(sft: &ModelCheckpoint, role: Role) -> Result<ModelCheckpoint> {
    check_role(role)?;
    // the stream only feeds a fresh lm head, which REWARD does not have
    Ok(sft.with_heads(HeadSet::REWARD, role, &mut stream(0, &[])))
}

fn pair_item(p: &ComparisonPair) -> PairItem {
    PairItem { chosen: p.chosen_sequence(), rejected: p.rejected_sequence() }
}

/// Fits a reward model to `pairs` from the SFT checkpoint `init`.
pub fn train_rm(init: &ModelCheckpoint, role: Role, pairs: &[ComparisonPair], hyper: &RmHyper) -> Result<TrainOutcome> {
    train_rm_with(init, role, pairs, hyper, |_| {})
}

pub fn train_rm_with(
    init: &ModelCheckpoint,
    role: Role,
    pairs: &[ComparisonPair],
    hyper: &RmHyper,
    mut on_step: impl FnMut(&StepMetric),
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::domain("no comparison pairs to train on"));
    }
    if pairs.iter().any(|p| p.chosen.is_empty() || p.rejected.is_empty()) {
        return Err(Error::domain("pair with an empty answer"));
    }
    let mut model = reward_init(init, role)?;
    let items: Vec<PairItem> = pairs.iter().map(pair_item).collect();
    let mut opt = AdamState::new(model.params.len());
    let mut metrics = Vec::new();
    let mut step = 0;
    for epoch in 0..hyper.epochs {
        for idx in epoch_batches(items.len(), hyper.batch_size, hyper.seed, tag::RM_TRAIN, epoch) {
            let batch: Vec<PairItem> = idx.iter().map(|&i| items[i].clone()).collect();
            let out = match loss_and_grads(&model, Batch::Bt(&batch), true) {
                Ok(o) => o,
                Err(Error::Numeric(msg)) => return Ok(TrainOutcome { model, metrics, diverged: Some(msg) }),
                Err(e) => return Err(e),
            };
            let prev = model.clone();
            adam_step(&mut model, &out.grads, &mut opt, hyper.lr)?;
            if model.params.iter().any(|p| !p.is_finite()) {
                return Ok(TrainOutcome { model: prev, metrics, diverged: Some(format!("non-finite parameters after step {step}")) });
            }
            let m = StepMetric { epoch, step, loss: out.loss };
            on_step(&m);
            metrics.push(m);
            step += 1;
        }
    }
    Ok(TrainOutcome { model, metrics, diverged: None })
}

/// Scalar reward of a full `question ++ answer` sequence.
pub fn score(rm: &ModelCheckpoint, tokens: &[TokenId]) -> Result<f64> {
    rm.forward(tokens)?
        .reward
        .ok_or_else(|| Error::domain(format!("{} checkpoint has no reward head", rm.role.name())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmEval {
    pub n_pairs: usize,
    pub accuracy: f64,
}

/// Share of pairs the model orders correctly; exact ties count half.
pub fn rm_eval(rm: &ModelCheckpoint, holdout: &[ComparisonPair]) -> Result<RmEval> {
    if let Some(p) = holdout.iter().find(|p| p.kind != PairKind::LabelSensitive) {
        return Err(Error::domain(format!("hold-out pair for example {} is not label-sensitive", p.example_id)));
    }
    let mut hits = 0.0;
    for p in holdout {
        let (c, r) = (score(rm, &p.chosen_sequence())?, score(rm, &p.rejected_sequence())?);
        hits += if c > r {
            1.0
        } else if c == r {
            0.5
        } else {
            0.0
        };
    }
    let accuracy = if holdout.is_empty() { 0.0 } else { hits / holdout.len() as f64 };
    Ok(RmEval { n_pairs: holdout.len(), accuracy })
}

/// Checks that no example id occurs in both pair sets.
pub fn check_disjoint(train: &[ComparisonPair], holdout: &[ComparisonPair]) -> Result<()> {
    let ids: std::collections::HashSet<(crate::synthlang::TaskId, u64)> = train.iter().map(|p| (p.task, p.example_id)).collect();
    match holdout.iter().find(|p| ids.contains(&(p.task, p.example_id))) {
        Some(p) => Err(Error::domain(format!("example {} appears in both training and hold-out pairs", p.example_id))),
        None => Ok(()),
    }
}

/// `task,n_pairs,accuracy` rows.
pub fn eval_csv(rows: &[(String, RmEval)]) -> String {
    let mut out = String::from("task,n_pairs,accuracy\n");
    for (task, e) in rows {
        out.push_str(&format!("{task},{},{:.6}\n", e.n_pairs, e.accuracy));
    }
    out
}
