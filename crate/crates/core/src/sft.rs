//! Rationale-augmented supervised fine-tuning.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{adam_step, loss_and_grads, AdamState, Batch, ModelCheckpoint, SftItem};
use crate::rng::{stream, tag};
use crate::synthlang::{oracle_answer, Answer, Example, Task, TokenId};

/// A question and its target answer; the loss covers answer positions only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftRecord {
    pub question: Vec<TokenId>,
    pub answer: Vec<TokenId>,
    /// One entry per token of `question ++ answer`: 1 on answer positions.
    pub mask: Vec<u8>,
}

impl SftRecord {
    pub fn new(question: Vec<TokenId>, answer: Vec<TokenId>) -> Self {
        let mask = std::iter::repeat(0).take(question.len()).chain(std::iter::repeat(1).take(answer.len())).collect();
        Self { question, answer, mask }
    }

    pub fn tokens(&self) -> Vec<TokenId> {
        [self.question.as_slice(), self.answer.as_slice()].concat()
    }

    pub fn to_item(&self) -> SftItem {
        SftItem { tokens: self.tokens(), mask: self.mask.iter().map(|&m| m != 0).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask.len() != self.question.len() + self.answer.len() {
            return Err(Error::domain("sft mask length differs from sequence length"));
        }
        if !self.mask.iter().skip(1).any(|&m| m != 0) {
            return Err(Error::domain("sft record has no target positions"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftDataset {
    pub records: Vec<SftRecord>,
    /// Examples dropped because question and answer overflow the context.
    pub rejected: usize,
}

/// One record per example: the gold oracle answer, or just `ANS label EOS`
/// when `with_rationale` is false (the no-rationale baseline).
pub fn build_sft_dataset(task: &Task, examples: &[Example], seed: u64, context_length: usize, with_rationale: bool) -> Result<SftDataset> {
    let mut records = Vec::with_capacity(examples.len());
    let mut rejected = 0;
    for ex in examples {
        let question = task.question(ex);
        let answer = if with_rationale {
            let mut s = stream(seed, &[tag::SFT_DATA, task.id().tag(), ex.id]);
            oracle_answer(&task.spec, ex, ex.gold_label, &task.vocab, &mut s)?
        } else {
            Answer::from_parts(&[], task.spec.label_tokens(ex.gold_label), &task.vocab)
        };
        if question.len() + answer.0.len() > context_length {
            rejected += 1;
            continue;
        }
        records.push(SftRecord::new(question, answer.0));
    }
    Ok(SftDataset { records, rejected })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SftHyper {
    fn default() -> Self {
        Self { lr: 3e-4, batch_size: 32, epochs: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetric {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

pub fn metrics_csv(metrics: &[StepMetric]) -> String {
    let mut out = String::from("epoch,step,loss\n");
    for m in metrics {
        out.push_str(&format!("{},{},{:.12e}\n", m.epoch, m.step, m.loss));
    }
    out
}

/// Outcome of a training loop. On divergence `model` is the last checkpoint
/// whose loss was finite and `diverged` says what went wrong.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelCheckpoint,
    pub metrics: Vec<StepMetric>,
    pub diverged: Option<String>,
}

/// Shuffled minibatch indices for one epoch.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, seed: u64, stage: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, &[stage, epoch as u64]));
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Minimizes the masked next-token loss with Adam.
pub fn train_sft(init: &ModelCheckpoint, records: &[SftRecord], hyper: &SftHyper) -> Result<TrainOutcome> {
    train_sft_with(init, records, hyper, |_| {})
}

/// [`train_sft`] with a callback per optimizer step.
pub fn train_sft_with(
    init: &ModelCheckpoint,
    records: &[SftRecord],
    hyper: &SftHyper,
    mut on_step: impl FnMut(&StepMetric),
) -> Result<TrainOutcome> {
    if records.is_empty() {
        return Err(Error::domain("sft dataset is empty"));
    }
    for r in records {
        r.validate()?;
    }
    let items: Vec<SftItem> = records.iter().map(SftRecord::to_item).collect();
    let mut model = init.clone();
    let mut opt = AdamState::new(model.params.len());
    let mut metrics = Vec::new();
    let mut step = 0;
    for epoch in 0..hyper.epochs {
        for batch_idx in epoch_batches(items.len(), hyper.batch_size, hyper.seed, tag::SFT_TRAIN, epoch) {
            let batch: Vec<SftItem> = batch_idx.iter().map(|&i| items[i].clone()).collect();
            let out = match loss_and_grads(&model, Batch::Sft(&batch), true) {
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

/// Mean masked loss of `records` under `model`.
pub fn sft_loss(model: &ModelCheckpoint, records: &[SftRecord]) -> Result<f64> {
    let items: Vec<SftItem> = records.iter().map(SftRecord::to_item).collect();
    Ok(loss_and_grads(model, Batch::Sft(&items), false)?.loss)
}
