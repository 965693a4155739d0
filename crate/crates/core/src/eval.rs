//! Evaluation metrics: label accuracy, Pearson correlation, judge win rates.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{greedy, ModelCheckpoint};
use crate::synthlang::{compare_scores, Answer, Example, Judge, Label, Task};

/// Default generation budget for answers.
pub const MAX_NEW: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub answers: Vec<Answer>,
    /// `None` where the answer could not be parsed.
    pub labels: Vec<Option<Label>>,
}

pub fn greedy_answers(policy: &ModelCheckpoint, task: &Task, examples: &[Example], max_new: usize) -> Result<Predictions> {
    let mut answers = Vec::with_capacity(examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    for ex in examples {
        let s = greedy(policy, &task.question(ex), max_new, task.vocab.eos())?;
        labels.push(task.parse(&s.tokens).ok());
        answers.push(Answer(s.tokens));
    }
    Ok(Predictions { answers, labels })
}

/// Fraction of exact label matches; unparseable answers count as wrong.
pub fn accuracy_of(labels: &[Option<Label>], examples: &[Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = labels.iter().zip(examples).filter(|(l, ex)| **l == Some(ex.gold_label)).count();
    hits as f64 / examples.len() as f64
}

pub fn label_accuracy(policy: &ModelCheckpoint, task: &Task, examples: &[Example]) -> Result<f64> {
    Ok(accuracy_of(&greedy_answers(policy, task, examples, MAX_NEW)?.labels, examples))
}

/// Sample Pearson correlation; `None` when either side is constant.
pub fn pearson(preds: &[f64], golds: &[f64]) -> Result<Option<f64>> {
    if preds.len() != golds.len() || preds.len() < 2 {
        return Err(Error::domain(format!("pearson needs two equal-length series of at least 2, got {} and {}", preds.len(), golds.len())));
    }
    let n = preds.len() as f64;
    let (mp, mg) = (preds.iter().sum::<f64>() / n, golds.iter().sum::<f64>() / n);
    let (mut cov, mut vp, mut vg) = (0.0, 0.0, 0.0);
    for (p, g) in preds.iter().zip(golds) {
        cov += (p - mp) * (g - mg);
        vp += (p - mp).powi(2);
        vg += (g - mg).powi(2);
    }
    if vp == 0.0 || vg == 0.0 {
        return Ok(None);
    }
    Ok(Some((cov / (vp.sqrt() * vg.sqrt())).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PearsonReport {
    pub value: Option<f64>,
    /// Answers left out because they had no parseable label.
    pub unparsed: usize,
}

/// Pearson between predicted and gold rating values over parseable answers.
pub fn rating_pearson(task: &Task, labels: &[Option<Label>], examples: &[Example]) -> Result<PearsonReport> {
    let (mut p, mut g) = (Vec::new(), Vec::new());
    for (l, ex) in labels.iter().zip(examples) {
        if let Some(l) = l {
            p.push(task.spec.value(*l));
            g.push(task.spec.value(ex.gold_label));
        }
    }
    let unparsed = examples.len() - p.len();
    let value = if p.len() < 2 { None } else { pearson(&p, &g)? };
    Ok(PearsonReport { value, unparsed })
}

/// Judge score with unparseable answers counted as 0 so means stay finite.
pub fn bounded_score(judge: &Judge, task: &Task, ex: &Example, answer: &Answer) -> f64 {
    let s = judge.score(&task.spec, ex, answer, &task.vocab);
    if s.is_finite() {
        s
    } else {
        0.0
    }
}

pub fn mean_judge_score(judge: &Judge, task: &Task, answers: &[Answer], examples: &[Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    answers.iter().zip(examples).map(|(a, ex)| bounded_score(judge, task, ex, a)).sum::<f64>() / examples.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WinCounts {
    pub win: usize,
    pub lose: usize,
    pub tie: usize,
}

impl WinCounts {
    pub fn n(&self) -> usize {
        self.win + self.lose + self.tie
    }
    /// `(win, lose, tie)` as fractions; zeros when empty.
    pub fn fractions(&self) -> (f64, f64, f64) {
        let n = self.n();
        if n == 0 {
            return (0.0, 0.0, 0.0);
        }
        let n = n as f64;
        (self.win as f64 / n, self.lose as f64 / n, self.tie as f64 / n)
    }
    pub fn mirrored(&self) -> Self {
        Self { win: self.lose, lose: self.win, tie: self.tie }
    }
}

/// Head-to-head judge comparison of two answer sets on the same examples.
pub fn win_counts(judge: &Judge, task: &Task, a: &[Answer], b: &[Answer], examples: &[Example]) -> WinCounts {
    let mut c = WinCounts::default();
    for ((x, y), ex) in a.iter().zip(b).zip(examples) {
        let (sx, sy) = (judge.score(&task.spec, ex, x, &task.vocab), judge.score(&task.spec, ex, y, &task.vocab));
        match compare_scores(sx, sy) {
            Ordering::Greater => c.win += 1,
            Ordering::Less => c.lose += 1,
            Ordering::Equal => c.tie += 1,
        }
    }
    c
}

pub fn win_rate(judge: &Judge, a: &ModelCheckpoint, b: &ModelCheckpoint, task: &Task, examples: &[Example]) -> Result<WinCounts> {
    if a.vocab_fingerprint != b.vocab_fingerprint {
        return Err(Error::domain("win rate needs two policies over the same vocab"));
    }
    let pa = greedy_answers(a, task, examples, MAX_NEW)?;
    let pb = greedy_answers(b, task, examples, MAX_NEW)?;
    Ok(win_counts(judge, task, &pa.answers, &pb.answers, examples))
}
