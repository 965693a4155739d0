//! Comparison pairs for reward modeling.
//!
//! Rationale-sensitive pairs come from ranking several policy samples with the
//! judge; label-sensitive pairs pit the gold oracle answer against an oracle
//! answer written for a wrong label.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{sample, ModelCheckpoint};
use crate::rng::{stream, tag, Stream};
use crate::synthlang::{compare_scores, oracle_answer, Answer, Example, Judge, Label, Task, TaskId, TaskSpec, TokenId};

/// Upper bound on pairs extracted from one question's ranking.
pub const MAX_PAIRS_PER_QUESTION: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    LabelSensitive,
    RationaleSensitive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonPair {
    pub task: TaskId,
    pub question: Vec<TokenId>,
    pub chosen: Vec<TokenId>,
    pub rejected: Vec<TokenId>,
    pub kind: PairKind,
    pub example_id: u64,
}

impl ComparisonPair {
    pub fn chosen_sequence(&self) -> Vec<TokenId> {
        [self.question.as_slice(), &self.chosen].concat()
    }
    pub fn rejected_sequence(&self) -> Vec<TokenId> {
        [self.question.as_slice(), &self.rejected].concat()
    }
}

/// Checks a pair against its kind invariant and its source example.
pub fn validate_pair(task: &Task, ex: &Example, pair: &ComparisonPair) -> Result<()> {
    let fail = |m: &str| Err(Error::domain(format!("pair for example {}: {m}", pair.example_id)));
    if pair.example_id != ex.id || pair.task != task.id() {
        return fail("source example mismatch");
    }
    if pair.question != task.question(ex) {
        return fail("question does not match the example");
    }
    if pair.chosen == pair.rejected {
        return fail("chosen and rejected are identical");
    }
    let (c, r) = (task.parse(&pair.chosen).ok(), task.parse(&pair.rejected).ok());
    match pair.kind {
        PairKind::LabelSensitive if c != Some(ex.gold_label) || r == Some(ex.gold_label) => {
            fail("label-sensitive pair must prefer the gold label over a different one")
        }
        PairKind::RationaleSensitive if c.is_none() || c != r => {
            fail("rationale-sensitive pair must share one parseable label")
        }
        _ => Ok(()),
    }
}

/// `k` independent samples for one question.
pub fn sample_candidates(
    policy: &ModelCheckpoint,
    task: &Task,
    question: &[TokenId],
    k: usize,
    temperature: f64,
    max_new: usize,
    stream: &mut Stream,
) -> Result<Vec<Answer>> {
    if k < 2 {
        return Err(Error::domain(format!("need at least 2 candidates, got {k}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::domain(format!("candidate temperature must be > 0, got {temperature}")));
    }
    (0..k)
        .map(|_| sample(policy, question, temperature, max_new, task.vocab.eos(), stream).map(|s| Answer(s.tokens)))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedPairs {
    pub pairs: Vec<ComparisonPair>,
    /// Strict preferences that fit neither kind: a wrong label ranked above
    /// another answer, or an unparseable answer involved without the gold label.
    pub unclassified: usize,
    pub diagnostic: Option<String>,
}

/// Every strict preference among the distinct answers, classified by label.
pub fn make_ranked_pairs(task: &Task, judge: &Judge, ex: &Example, answers: &[Answer]) -> RankedPairs {
    let mut seen = HashSet::new();
    let distinct: Vec<&Answer> = answers.iter().filter(|a| seen.insert(a.0.clone())).collect();
    let labels: Vec<Option<Label>> = distinct.iter().map(|a| task.parse(&a.0).ok()).collect();
    if labels.iter().all(Option::is_none) {
        return RankedPairs { diagnostic: Some(format!("example {}: no parseable answer", ex.id)), ..Default::default() };
    }
    let scores: Vec<f64> = distinct.iter().map(|a| judge.score(&task.spec, ex, a, &task.vocab)).collect();
    let question = task.question(ex);
    let mut out = RankedPairs::default();
    let mut order: Vec<usize> = (0..distinct.len()).collect();
    // best first; stable so equal scores keep sample order
    order.sort_by(|&a, &b| compare_scores(scores[b], scores[a]));
    for (x, &i) in order.iter().enumerate() {
        for &j in &order[x + 1..] {
            if compare_scores(scores[i], scores[j]) != std::cmp::Ordering::Greater {
                continue;
            }
            let kind = match (labels[i], labels[j]) {
                (Some(a), Some(b)) if a == b => PairKind::RationaleSensitive,
                (Some(a), b) if a == ex.gold_label && b != Some(a) => PairKind::LabelSensitive,
                _ => {
                    out.unclassified += 1;
                    continue;
                }
            };
            if out.pairs.len() == MAX_PAIRS_PER_QUESTION {
                continue;
            }
            out.pairs.push(ComparisonPair {
                task: task.id(),
                question: question.clone(),
                chosen: distinct[i].0.clone(),
                rejected: distinct[j].0.clone(),
                kind,
                example_id: ex.id,
            });
        }
    }
    out
}

/// Rating offsets on the half-point grid, in half points: -1, -0.5, 0, 0.5, 1.
const RATING_OFFSETS: [i32; 5] = [-2, -1, 0, 1, 2];

/// The wrong-rating rule on real values: add 3 and the offset, wrap values
/// above 5 by subtracting 5.
pub fn shifted_rating(gold: f64, offset: f64) -> f64 {
    let raw = gold + 3.0 + offset;
    if raw > 5.0 {
        raw - 5.0
    } else {
        raw
    }
}

/// [`shifted_rating`] on the grid: gold and offset in half points.
pub fn shifted_rating_grid(gold_halves: i32, offset_halves: i32) -> i32 {
    let raw = gold_halves + 6 + offset_halves;
    if raw > 10 {
        raw - 10
    } else {
        raw
    }
}

/// Draws a wrong label: uniform over the other categories, or the shifted
/// rating rule with the offset resampled on collision.
pub fn incorrect_label(spec: &TaskSpec, gold: Label, stream: &mut Stream) -> Result<Label> {
    let n = spec.num_labels();
    if n < 2 {
        return Err(Error::domain("label space has a single label"));
    }
    if spec.is_ordinal() {
        loop {
            let u = RATING_OFFSETS[stream.gen_range(0..RATING_OFFSETS.len())];
            let v = shifted_rating_grid(i32::from(gold.0), u);
            let label = spec
                .label_for_value(f64::from(v) * 0.5)
                .ok_or_else(|| Error::domain(format!("shifted rating {v} half points is off the grid")))?;
            if label != gold {
                return Ok(label);
            }
        }
    }
    let pick = stream.gen_range(0..n - 1) as u8;
    Ok(Label(if pick >= gold.0 { pick + 1 } else { pick }))
}

/// All labels [`incorrect_label`] can return for `gold`.
pub fn incorrect_label_support(spec: &TaskSpec, gold: Label) -> Vec<Label> {
    if spec.is_ordinal() {
        let mut v: Vec<Label> = RATING_OFFSETS
            .iter()
            .map(|&u| Label(shifted_rating_grid(i32::from(gold.0), u) as u8))
            .filter(|&l| l != gold)
            .collect();
        v.sort();
        v.dedup();
        v
    } else {
        spec.labels().filter(|&l| l != gold).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelPairs {
    pub pairs: Vec<ComparisonPair>,
    pub diagnostic: Option<String>,
}

/// Gold oracle answer against oracle answers for `n_pairs` distinct wrong labels.
pub fn make_label_pairs(task: &Task, ex: &Example, n_pairs: usize, stream: &mut Stream) -> Result<LabelPairs> {
    if n_pairs == 0 {
        return Err(Error::domain("n_pairs must be at least 1"));
    }
    let support = incorrect_label_support(&task.spec, ex.gold_label);
    let mut diagnostic = None;
    let want = if n_pairs > support.len() {
        diagnostic = Some(format!(
            "example {}: only {} wrong labels available, {} requested",
            ex.id,
            support.len(),
            n_pairs
        ));
        support.len()
    } else {
        n_pairs
    };
    let mut wrong: Vec<Label> = Vec::with_capacity(want);
    while wrong.len() < want {
        let l = incorrect_label(&task.spec, ex.gold_label, stream)?;
        if !wrong.contains(&l) {
            wrong.push(l);
        }
    }
    let chosen = oracle_answer(&task.spec, ex, ex.gold_label, &task.vocab, stream)?;
    let question = task.question(ex);
    let pairs = wrong
        .into_iter()
        .map(|l| {
            Ok(ComparisonPair {
                task: task.id(),
                question: question.clone(),
                chosen: chosen.0.clone(),
                rejected: oracle_answer(&task.spec, ex, l, &task.vocab, stream)?.0,
                kind: PairKind::LabelSensitive,
                example_id: ex.id,
            })
        })
        .collect::<Result<_>>()?;
    Ok(LabelPairs { pairs, diagnostic })
}

/// Label-sensitive pairs for a whole pool, one derived stream per example.
pub fn build_label_pairs(task: &Task, examples: &[Example], n_pairs: usize, seed: u64) -> Result<(Vec<ComparisonPair>, usize)> {
    let mut pairs = Vec::new();
    let mut short = 0;
    for ex in examples {
        let lp = make_label_pairs(task, ex, n_pairs, &mut stream(seed, &[tag::LABEL_PAIRS, task.id().tag(), ex.id]))?;
        short += usize::from(lp.diagnostic.is_some());
        pairs.extend(lp.pairs);
    }
    Ok((pairs, short))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankedHyper {
    pub k: usize,
    pub temperature: f64,
    pub max_new: usize,
}

impl Default for RankedHyper {
    fn default() -> Self {
        Self { k: 5, temperature: 0.8, max_new: crate::eval::MAX_NEW }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedSummary {
    pub pairs: Vec<ComparisonPair>,
    pub unclassified: usize,
    pub empty_questions: usize,
}

/// Samples and ranks candidates for every example, merging in example order.
pub fn build_ranked_pairs(
    policy: &ModelCheckpoint,
    task: &Task,
    judge: &Judge,
    examples: &[Example],
    hyper: &RankedHyper,
    seed: u64,
) -> Result<RankedSummary> {
    let mut out = RankedSummary::default();
    for ex in examples {
        let mut s = stream(seed, &[tag::RANKED, task.id().tag(), ex.id]);
        let answers = sample_candidates(policy, task, &task.question(ex), hyper.k, hyper.temperature, hyper.max_new, &mut s)?;
        let r = make_ranked_pairs(task, judge, ex, &answers);
        out.unclassified += r.unclassified;
        out.empty_questions += usize::from(r.pairs.is_empty());
        out.pairs.extend(r.pairs);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub total: usize,
    pub rationale_sensitive: usize,
    pub label_sensitive: usize,
}

impl KindCounts {
    /// Rationale-sensitive share; `None` without pairs.
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.rationale_sensitive as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairStats {
    pub overall: KindCounts,
    pub per_task: BTreeMap<TaskId, KindCounts>,
}

pub fn pair_stats(pairs: &[ComparisonPair]) -> PairStats {
    let mut stats = PairStats::default();
    for p in pairs {
        for c in [&mut stats.overall, stats.per_task.entry(p.task).or_default()] {
            c.total += 1;
            match p.kind {
                PairKind::RationaleSensitive => c.rationale_sensitive += 1,
                PairKind::LabelSensitive => c.label_sensitive += 1,
            }
        }
    }
    stats
}

/// `task,total,rationale_sensitive,label_sensitive,fraction`; the fraction
/// column is empty when a task has no pairs.
pub fn stats_csv(stats: &PairStats) -> String {
    let mut out = String::from("task,total,rationale_sensitive,label_sensitive,fraction\n");
    for (task, c) in &stats.per_task {
        let frac = c.fraction().map(|f| format!("{f:.6}")).unwrap_or_default();
        out.push_str(&format!("{task},{},{},{},{frac}\n", c.total, c.rationale_sensitive, c.label_sensitive));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlang::{render_rationale, TaskId};

    #[test]
    fn categorical_wrong_labels() {
        let task = Task::new(TaskId::Polarity);
        for seed in 0..20 {
            assert_eq!(incorrect_label(&task.spec, Label(0), &mut stream(seed, &[])).unwrap(), Label(1));
        }
        let t4 = Task::new(TaskId::Topic4);
        let mut seen = HashSet::new();
        for seed in 0..200 {
            let l = incorrect_label(&t4.spec, Label(2), &mut stream(seed, &[])).unwrap();
            assert_ne!(l, Label(2));
            seen.insert(l);
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn rating_shift_examples() {
        // gold 3.0 with offset +0.5: 6.5 wraps to 1.5
        assert_eq!(shifted_rating_grid(6, 1), 3);
        assert!((shifted_rating(3.0, 0.5) - 1.5).abs() < 1e-12);
        assert!((shifted_rating(2.8, 0.3) - 1.1).abs() < 1e-12);
        assert_eq!(shifted_rating(1.0, 1.0), 5.0);
    }

    #[test]
    fn label_pairs_respect_label_space() {
        let task = Task::new(TaskId::Polarity);
        let ex = &task.generate(1, 0, 1)[0];
        let lp = make_label_pairs(&task, ex, 2, &mut stream(0, &[])).unwrap();
        assert_eq!(lp.pairs.len(), 1);
        assert!(lp.diagnostic.is_some());

        let t4 = Task::new(TaskId::Topic4);
        let ex = &t4.generate(1, 0, 1)[0];
        let lp = make_label_pairs(&t4, ex, 2, &mut stream(0, &[])).unwrap();
        assert_eq!(lp.pairs.len(), 2);
        assert!(lp.diagnostic.is_none());
        assert_ne!(t4.parse(&lp.pairs[0].rejected), t4.parse(&lp.pairs[1].rejected));
        for p in &lp.pairs {
            validate_pair(&t4, ex, p).unwrap();
        }
        assert!(make_label_pairs(&t4, ex, 0, &mut stream(0, &[])).is_err());
    }

    fn answer(task: &Task, counts: &[u32], label: Label, variant: usize) -> Answer {
        let r = render_rationale(&task.spec, counts, (variant, 0), &task.vocab);
        Answer::from_parts(&r, task.spec.label_tokens(label), &task.vocab)
    }

    #[test]
    fn ranked_pairs_by_enumeration() {
        let task = Task::new(TaskId::Polarity);
        let ex = task.generate(5, 0, 40).into_iter().find(|e| e.gold_label == Label(0) && e.evidence[0] >= 3).unwrap();
        let (p, n) = (ex.evidence[0], ex.evidence[1]);
        let judge = Judge::default();
        // four positive answers with distinct scores, and a bare negative below them
        let answers = vec![
            answer(&task, &[p, n], Label(0), 0),     // 4.5
            answer(&task, &[p + 1, n], Label(0), 0), // 2.5
            // 1.25, or 1.5 without negative evidence
            Answer::from_parts(&[task.vocab.must("pos"), task.vocab.digit(p)], task.spec.label_tokens(Label(0)), &task.vocab),
            Answer::from_parts(&[], task.spec.label_tokens(Label(1)), &task.vocab), // 0.0
            Answer::from_parts(&[], task.spec.label_tokens(Label(0)), &task.vocab),  // 1.0
        ];
        let scores: Vec<f64> = answers.iter().map(|a| judge.score(&task.spec, &ex, a, &task.vocab)).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        sorted.dedup();
        assert_eq!(sorted.len(), 5, "scores must be distinct: {scores:?}");

        let r = make_ranked_pairs(&task, &judge, &ex, &answers);
        // brute force over C(5,2): same label => rationale-sensitive
        let labels = [0, 0, 0, 1, 0];
        let mut same = 0;
        for i in 0..5 {
            for j in i + 1..5 {
                same += usize::from(labels[i] == labels[j]);
            }
        }
        assert_eq!(r.pairs.len(), 10);
        assert_eq!(r.unclassified, 0);
        let st = pair_stats(&r.pairs);
        assert_eq!(st.overall.rationale_sensitive, same);
        assert_eq!(st.overall.label_sensitive, 10 - same);
        assert_eq!(st.overall.fraction(), Some(0.6));
        for pair in &r.pairs {
            validate_pair(&task, &ex, pair).unwrap();
        }
    }

    #[test]
    fn ranked_pairs_dedup_and_ties() {
        let task = Task::new(TaskId::Polarity);
        let ex = &task.generate(5, 0, 1)[0];
        let judge = Judge::default();
        let a = answer(&task, &ex.evidence, ex.gold_label, 0);
        assert!(make_ranked_pairs(&task, &judge, ex, &vec![a.clone(); 5]).pairs.is_empty());
        let b = answer(&task, &ex.evidence, ex.gold_label, 1);
        assert_ne!(a, b);
        assert!(make_ranked_pairs(&task, &judge, ex, &[a, b]).pairs.is_empty());
        let junk = vec![Answer(vec![task.vocab.must("so")]), Answer(vec![task.vocab.must("thus")])];
        let r = make_ranked_pairs(&task, &judge, ex, &junk);
        assert!(r.pairs.is_empty() && r.diagnostic.is_some());
    }

    #[test]
    fn stats_edge_cases() {
        let st = pair_stats(&[]);
        assert_eq!(st.overall, KindCounts::default());
        assert_eq!(st.overall.fraction(), None);
        assert_eq!(stats_csv(&st), "task,total,rationale_sensitive,label_sensitive,fraction\n");
    }
}
