use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Polarity,
    Topic4,
    Rating,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::Polarity, TaskId::Topic4, TaskId::Rating];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Polarity => "polarity",
            TaskId::Topic4 => "topic4",
            TaskId::Rating => "rating",
        }
    }

    /// Small stable integer used when deriving random streams.
    pub fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown task {s:?} (expected polarity, topic4 or rating)")))
    }
}

/// Index into a task's label space. For the rating task the index counts
/// half points, so label `i` has value `i / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(pub u8);

/// An evidence family: the rationale token that names it and the input words
/// that count towards it.
#[derive(Debug, Clone)]
pub struct Family {
    pub name: String,
    pub token: TokenId,
    pub words: Vec<TokenId>,
}

pub const RATING_SCORED: u32 = 10;

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub task: TaskId,
    labels: Vec<String>,
    label_tokens: Vec<Vec<TokenId>>,
    pub families: Vec<Family>,
    pub filler: Vec<TokenId>,
    pub preamble: Vec<TokenId>,
    /// Inclusive bounds on input length in tokens.
    pub length_range: (usize, usize),
    /// Inclusive bounds on the number of evidence tokens in an input.
    pub scored_range: (u32, u32),
}

impl TaskSpec {
    pub fn new(task: TaskId, vocab: &Vocab) -> Self {
        let family = |name: &str, words: &[&str]| Family {
            name: name.to_string(),
            token: vocab.must(name),
            words: words.iter().map(|w| vocab.must(w)).collect(),
        };
        let sentiment = || {
            vec![
                family("pos", &["good", "great", "superb", "fine"]),
                family("neg", &["bad", "awful", "dull", "poor"]),
            ]
        };
        let filler = ["the", "a", "film", "story", "it", "was", "and", "of", "very", "this"]
            .iter()
            .map(|w| vocab.must(w))
            .collect();
        let (families, labels, preamble_word, length_range, scored_range) = match task {
            TaskId::Polarity => (
                sentiment(),
                vec!["positive".to_string(), "negative".to_string()],
                "sentiment",
                (6, 14),
                (1, 6),
            ),
            TaskId::Topic4 => (
                vec![
                    family("sports", &["goal", "match", "team"]),
                    family("politics", &["vote", "law", "senate"]),
                    family("science", &["atom", "cell", "theory"]),
                    family("business", &["market", "profit", "stock"]),
                ],
                ["sports", "politics", "science", "business"].map(String::from).to_vec(),
                "topic",
                (8, 16),
                (3, 8),
            ),
            TaskId::Rating => (
                sentiment(),
                (0..=10).map(|h| format!("{:.3}", f64::from(h) * 0.5)).collect(),
                "rating",
                (10, 14),
                (RATING_SCORED, RATING_SCORED),
            ),
        };
        let label_tokens = labels
            .iter()
            .map(|l| match task {
                TaskId::Rating => l
                    .chars()
                    .map(|c| if c == '.' { vocab.point() } else { vocab.digit(c.to_digit(10).unwrap()) })
                    .collect(),
                _ => vec![vocab.must(l)],
            })
            .collect();
        Self {
            task,
            labels,
            label_tokens,
            families,
            filler,
            preamble: vec![vocab.bos(), vocab.must("what"), vocab.must(preamble_word)],
            length_range,
            scored_range,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> {
        (0..self.labels.len() as u8).map(Label)
    }

    pub fn is_ordinal(&self) -> bool {
        self.task == TaskId::Rating
    }

    pub fn label_name(&self, label: Label) -> &str {
        &self.labels[label.0 as usize]
    }

    pub fn label_tokens(&self, label: Label) -> &[TokenId] {
        &self.label_tokens[label.0 as usize]
    }

    pub fn parse_label_name(&self, name: &str) -> Result<Label> {
        if let Some(i) = self.labels.iter().position(|l| l == name) {
            return Ok(Label(i as u8));
        }
        if self.is_ordinal() {
            if let Ok(v) = name.parse::<f64>() {
                if let Some(l) = self.label_for_value(v) {
                    if (self.value(l) - v).abs() < 1e-9 {
                        return Ok(l);
                    }
                }
            }
        }
        Err(Error::domain(format!("{name:?} is not a {} label", self.task)))
    }

    /// Numeric value of a label: the rating for the ordinal task, the label
    /// index otherwise.
    pub fn value(&self, label: Label) -> f64 {
        match self.task {
            TaskId::Rating => f64::from(label.0) * 0.5,
            _ => f64::from(label.0),
        }
    }

    /// Nearest grid label for a rating value in `[0, 5]`; half-way values round up.
    pub fn label_for_value(&self, v: f64) -> Option<Label> {
        if !self.is_ordinal() || !v.is_finite() || !(0.0..=5.0).contains(&v) {
            return None;
        }
        Some(Label((v * 2.0 + 0.5).floor() as u8))
    }

    pub fn contains(&self, label: Label) -> bool {
        (label.0 as usize) < self.labels.len()
    }

    /// The task rule: the label implied by per-family evidence counts, or
    /// `None` when the counts are a tie or otherwise imply nothing.
    pub fn rule(&self, counts: &[u32]) -> Option<Label> {
        if counts.len() != self.families.len() {
            return None;
        }
        match self.task {
            TaskId::Polarity => match counts[0].cmp(&counts[1]) {
                std::cmp::Ordering::Greater => Some(Label(0)),
                std::cmp::Ordering::Less => Some(Label(1)),
                std::cmp::Ordering::Equal => None,
            },
            TaskId::Topic4 => {
                let max = *counts.iter().max()?;
                let mut at_max = counts.iter().enumerate().filter(|(_, &c)| c == max);
                let (i, _) = at_max.next()?;
                at_max.next().is_none().then_some(Label(i as u8))
            }
            TaskId::Rating => (counts[0] + counts[1] == RATING_SCORED).then_some(Label(counts[0] as u8)),
        }
    }

    /// The closest counts to `truth` (L1 distance) whose rule implies `target`.
    ///
    /// The total number of evidence tokens is preserved: fabricated evidence
    /// re-attributes tokens between families rather than inventing new ones.
    /// Among equally close candidates the lexicographically largest count
    /// vector wins, i.e. lower-index families keep their tokens.
    pub fn perturb_counts(&self, truth: &[u32], target: Label) -> Vec<u32> {
        if self.rule(truth) == Some(target) {
            return truth.to_vec();
        }
        let total: u32 = truth.iter().sum();
        match self.task {
            TaskId::Polarity => {
                let winner = total / 2 + 1;
                if target.0 == 0 {
                    vec![winner, total - winner]
                } else {
                    vec![total - winner, winner]
                }
            }
            TaskId::Rating => {
                let pos = u32::from(target.0);
                vec![pos, RATING_SCORED - pos]
            }
            TaskId::Topic4 => {
                let mut best: Option<(u32, Vec<u32>)> = None;
                let mut c = vec![0u32; truth.len()];
                self.search_closest(truth, target, total, 0, &mut c, &mut best);
                best.expect("every topic is reachable by re-attribution").1
            }
        }
    }

    /// Exhaustive search over count vectors with the given total.
    fn search_closest(&self, truth: &[u32], target: Label, left: u32, i: usize, c: &mut Vec<u32>, best: &mut Option<(u32, Vec<u32>)>) {
        if i + 1 == c.len() {
            c[i] = left;
            if self.rule(c) == Some(target) {
                let d: u32 = c.iter().zip(truth).map(|(a, b)| a.abs_diff(*b)).sum();
                if best.as_ref().map_or(true, |(bd, bv)| d < *bd || (d == *bd && c.as_slice() > bv.as_slice())) {
                    *best = Some((d, c.clone()));
                }
            }
            return;
        }
        for v in 0..=left {
            c[i] = v;
            self.search_closest(truth, target, left - v, i + 1, c, best);
        }
    }

    /// Draws one example. The same stream state always gives the same example.
    pub fn gen_example(&self, id: u64, stream: &mut Stream) -> Example {
        let nfam = self.families.len();
        let counts = loop {
            let total = stream.gen_range(self.scored_range.0..=self.scored_range.1);
            let counts = match self.task {
                TaskId::Polarity | TaskId::Rating => {
                    let pos = stream.gen_range(0..=total);
                    vec![pos, total - pos]
                }
                TaskId::Topic4 => {
                    let mut c = vec![0u32; nfam];
                    for _ in 0..total {
                        c[stream.gen_range(0..nfam)] += 1;
                    }
                    c
                }
            };
            if self.rule(&counts).is_some() {
                break counts;
            }
        };
        let scored: usize = counts.iter().sum::<u32>() as usize;
        let len = stream.gen_range(self.length_range.0.max(scored)..=self.length_range.1.max(scored));
        let mut input = Vec::with_capacity(len);
        for (fam, &n) in self.families.iter().zip(&counts) {
            for _ in 0..n {
                input.push(*fam.words.choose(stream).expect("family has words"));
            }
        }
        while input.len() < len {
            input.push(*self.filler.choose(stream).expect("filler is nonempty"));
        }
        input.shuffle(stream);
        let gold = self.rule(&counts).expect("counts decide a label");
        Example { id, task: self.task, input_tokens: input, gold_label: gold, evidence: counts }
    }

    /// Evidence counts recomputed from input tokens.
    pub fn count_evidence(&self, input: &[TokenId]) -> Vec<u32> {
        self.families
            .iter()
            .map(|f| input.iter().filter(|t| f.words.contains(t)).count() as u32)
            .collect()
    }

    /// Question prompt: preamble, input, separator.
    pub fn render_question(&self, ex: &Example, vocab: &Vocab) -> Vec<TokenId> {
        let mut q = self.preamble.clone();
        q.extend_from_slice(&ex.input_tokens);
        q.push(vocab.sep());
        q
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: u64,
    pub task: TaskId,
    pub input_tokens: Vec<TokenId>,
    pub gold_label: Label,
    /// Per-family evidence counts, in the task's family order.
    pub evidence: Vec<u32>,
}

/// On-disk form of an [`Example`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRecord {
    pub id: u64,
    pub task: TaskId,
    pub input_tokens: Vec<TokenId>,
    pub gold_label: String,
    pub evidence: BTreeMap<String, u32>,
}

impl Example {
    pub fn to_record(&self, spec: &TaskSpec) -> ExampleRecord {
        ExampleRecord {
            id: self.id,
            task: self.task,
            input_tokens: self.input_tokens.clone(),
            gold_label: spec.label_name(self.gold_label).to_string(),
            evidence: spec.families.iter().map(|f| f.name.clone()).zip(self.evidence.iter().copied()).collect(),
        }
    }

    /// Rebuilds an example, checking the stored evidence and label against the input.
    pub fn from_record(rec: ExampleRecord, spec: &TaskSpec) -> Result<Self> {
        if rec.task != spec.task {
            return Err(Error::domain(format!("example {} is {}, expected {}", rec.id, rec.task, spec.task)));
        }
        let evidence: Vec<u32> = spec
            .families
            .iter()
            .map(|f| rec.evidence.get(&f.name).copied().unwrap_or(0))
            .collect();
        let gold = spec.parse_label_name(&rec.gold_label)?;
        if rec.evidence.len() != spec.families.len()
            || spec.count_evidence(&rec.input_tokens) != evidence
            || spec.rule(&evidence) != Some(gold)
        {
            return Err(Error::domain(format!("example {} is inconsistent with its evidence", rec.id)));
        }
        Ok(Example { id: rec.id, task: rec.task, input_tokens: rec.input_tokens, gold_label: gold, evidence })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn spec(t: TaskId) -> TaskSpec {
        TaskSpec::new(t, &Vocab::standard())
    }

    #[test]
    fn label_spaces() {
        assert_eq!(spec(TaskId::Polarity).num_labels(), 2);
        assert_eq!(spec(TaskId::Topic4).num_labels(), 4);
        let r = spec(TaskId::Rating);
        assert_eq!(r.num_labels(), 11);
        assert_eq!(r.label_name(Label(5)), "2.500");
        assert_eq!(r.value(Label(10)), 5.0);
        assert_eq!(r.label_for_value(2.74), Some(Label(5)));
        assert_eq!(r.label_for_value(2.75), Some(Label(6)));
        assert_eq!(r.label_for_value(5.2), None);
    }

    #[test]
    fn task_rules() {
        let p = spec(TaskId::Polarity);
        assert_eq!(p.rule(&[3, 1]), Some(Label(0)));
        assert_eq!(p.rule(&[1, 3]), Some(Label(1)));
        assert_eq!(p.rule(&[2, 2]), None);
        let r = spec(TaskId::Rating);
        assert_eq!(r.rule(&[5, 5]), Some(Label(5)));
        assert_eq!(r.label_name(r.rule(&[5, 5]).unwrap()), "2.500");
        assert_eq!(r.rule(&[5, 4]), None);
        let t = spec(TaskId::Topic4);
        assert_eq!(t.rule(&[4, 1, 1, 2]), Some(Label(0)));
        assert_eq!(t.rule(&[2, 2, 1, 0]), None);
    }

    #[test]
    fn generated_examples_satisfy_invariants() {
        for task in TaskId::ALL {
            let s = spec(task);
            for i in 0..300 {
                let ex = s.gen_example(i, &mut stream(3, &[task.tag(), i]));
                assert_eq!(s.count_evidence(&ex.input_tokens), ex.evidence);
                assert_eq!(s.rule(&ex.evidence), Some(ex.gold_label));
                let (lo, hi) = s.length_range;
                assert!(ex.input_tokens.len() >= lo && ex.input_tokens.len() <= hi);
                if task == TaskId::Rating {
                    assert_eq!(ex.evidence.iter().sum::<u32>(), RATING_SCORED);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(TaskId::Topic4);
        let a = s.gen_example(9, &mut stream(1, &[9]));
        let b = s.gen_example(9, &mut stream(1, &[9]));
        assert_eq!(a, b);
    }

    #[test]
    fn polarity_labels_are_balanced() {
        let s = spec(TaskId::Polarity);
        let n = 10_000;
        let pos = (0..n).filter(|&i| s.gen_example(i, &mut stream(11, &[i])).gold_label == Label(0)).count();
        let frac = pos as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.05, "positive fraction {frac}");
    }

    #[test]
    fn questions_are_deterministic_and_injective() {
        let v = Vocab::standard();
        let s = spec(TaskId::Polarity);
        let ex = s.gen_example(0, &mut stream(2, &[0]));
        assert_eq!(s.render_question(&ex, &v), s.render_question(&ex, &v));
        let mut other = ex.clone();
        let i = other.input_tokens.iter().position(|t| s.filler.contains(t)).unwrap();
        other.input_tokens[i] = *s.filler.iter().find(|&&f| f != ex.input_tokens[i]).unwrap();
        assert_ne!(s.render_question(&ex, &v), s.render_question(&other, &v));
        let q = s.render_question(&ex, &v);
        assert_eq!(q.len(), s.preamble.len() + ex.input_tokens.len() + 1);
        assert_eq!(*q.last().unwrap(), v.sep());
    }

    #[test]
    fn record_round_trip_and_validation() {
        let s = spec(TaskId::Topic4);
        let ex = s.gen_example(5, &mut stream(4, &[5]));
        let rec = ex.to_record(&s);
        let json = serde_json::to_string(&rec).unwrap();
        let back: ExampleRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(Example::from_record(back, &s).unwrap(), ex);
        let mut bad = rec.clone();
        *bad.evidence.values_mut().next().unwrap() += 1;
        assert!(Example::from_record(bad, &s).is_err());
        assert!(Example::from_record(rec, &spec(TaskId::Polarity)).is_err());
    }
}
