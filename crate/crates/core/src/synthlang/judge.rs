use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::answer::{claimed_counts, parse_label, Answer};
use super::task::{Example, TaskSpec};
use super::vocab::Vocab;
use crate::error::{Error, Result};

/// Scores closer than this are ties.
pub const TIE_EPS: f64 = 1e-6;

/// Term weights of the deterministic judge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeWeights {
    /// Every family's claimed count equals the true evidence.
    pub factual: f64,
    /// The stated label follows from the claimed counts.
    pub consistent: f64,
    /// The stated label is the gold label.
    pub correct: f64,
    /// Scaled by the fraction of nonzero-evidence families the rationale mentions.
    pub coverage: f64,
    /// Penalty per `length_unit` rationale tokens beyond `free_length`.
    pub length_penalty: f64,
    pub free_length: usize,
    pub length_unit: f64,
}

impl Default for JudgeWeights {
    fn default() -> Self {
        Self {
            factual: 2.0,
            consistent: 1.0,
            correct: 1.0,
            coverage: 0.5,
            length_penalty: 0.1,
            free_length: 40,
            length_unit: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Judge {
    pub weights: JudgeWeights,
}

impl Judge {
    pub fn new(weights: JudgeWeights) -> Self {
        Self { weights }
    }

    /// Quality score of one answer; `-inf` when the label cannot be parsed.
    pub fn score(&self, spec: &TaskSpec, ex: &Example, ans: &Answer, vocab: &Vocab) -> f64 {
        let Ok(stated) = parse_label(ans.tokens(), spec, vocab) else {
            return f64::NEG_INFINITY;
        };
        let w = &self.weights;
        let rationale = ans.rationale(vocab);
        let claims = claimed_counts(spec, rationale, vocab);
        let full: Option<Vec<u32>> = claims.iter().copied().collect();

        let factual = full.as_deref() == Some(ex.evidence.as_slice());
        let consistent = full.as_deref().and_then(|c| spec.rule(c)) == Some(stated);
        let correct = stated == ex.gold_label;
        let decisive: Vec<usize> = (0..ex.evidence.len()).filter(|&f| ex.evidence[f] > 0).collect();
        let covered = decisive.iter().filter(|&&f| claims[f].is_some()).count();
        let coverage = covered as f64 / decisive.len().max(1) as f64;
        let excess = rationale.len().saturating_sub(w.free_length) as f64;

        let indicator = |b: bool| if b { 1.0 } else { 0.0 };
        w.factual * indicator(factual) + w.consistent * indicator(consistent) + w.correct * indicator(correct)
            + w.coverage * coverage
            - w.length_penalty * excess / w.length_unit
    }

    pub fn rank(&self, spec: &TaskSpec, ex: &Example, answers: &[Answer], vocab: &Vocab) -> Result<JudgeVerdict> {
        if answers.len() < 2 {
            return Err(Error::domain(format!("ranking needs at least 2 answers, got {}", answers.len())));
        }
        Ok(JudgeVerdict::from_scores(answers.iter().map(|a| self.score(spec, ex, a, vocab)).collect()))
    }
}

/// Compares judge scores with the tie band; two `-inf` scores tie.
pub fn compare_scores(a: f64, b: f64) -> Ordering {
    if a == b || (a - b).abs() <= TIE_EPS {
        Ordering::Equal
    } else if a > b {
        Ordering::Greater
    } else {
        Ordering::Less
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeVerdict {
    pub scores: Vec<f64>,
    /// 1-based rank of each answer: one plus the number of strictly better answers.
    pub positions: Vec<usize>,
}

impl JudgeVerdict {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let positions = scores
            .iter()
            .map(|&s| 1 + scores.iter().filter(|&&o| compare_scores(o, s) == Ordering::Greater).count())
            .collect();
        Self { scores, positions }
    }

    /// Answer indices from best to worst; ties keep input order.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by_key(|&i| self.positions[i]);
        idx
    }

    pub fn tied(&self, i: usize, j: usize) -> bool {
        compare_scores(self.scores[i], self.scores[j]) == Ordering::Equal
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::synthlang::answer::{oracle_answer, render_rationale};
    use crate::synthlang::{Label, TaskId};

    fn polarity() -> (Vocab, TaskSpec, Example) {
        let v = Vocab::standard();
        let s = TaskSpec::new(TaskId::Polarity, &v);
        let mut input = vec![s.families[0].words[0]; 3];
        input.push(s.families[1].words[0]);
        input.extend([s.filler[0], s.filler[1]]);
        let ex = Example { id: 0, task: TaskId::Polarity, input_tokens: input, gold_label: Label(0), evidence: vec![3, 1] };
        (v, s, ex)
    }

    #[test]
    fn score_terms() {
        let (v, s, ex) = polarity();
        let j = Judge::default();
        let gold = oracle_answer(&s, &ex, Label(0), &v, &mut stream(1, &[])).unwrap();
        assert_eq!(j.score(&s, &ex, &gold, &v), 4.5);
        let wrong = oracle_answer(&s, &ex, Label(1), &v, &mut stream(1, &[])).unwrap();
        assert_eq!(j.score(&s, &ex, &wrong, &v), 1.5);
        let r = render_rationale(&s, &[3, 1], (0, 0), &v);
        let mismatched = Answer::from_parts(&r, s.label_tokens(Label(1)), &v);
        assert_eq!(j.score(&s, &ex, &mismatched, &v), 2.5);
        assert_eq!(j.score(&s, &ex, &Answer(r), &v), f64::NEG_INFINITY);
    }

    #[test]
    fn coverage_and_length_terms() {
        let (v, s, ex) = polarity();
        let j = Judge::default();
        // mentions only the positive family: not factual, label not implied
        let r = vec![v.must("pos"), v.digit(3)];
        let a = Answer::from_parts(&r, s.label_tokens(Label(0)), &v);
        assert!((j.score(&s, &ex, &a, &v) - (1.0 + 0.25)).abs() < 1e-12);
        let mut long = render_rationale(&s, &[3, 1], (0, 0), &v);
        while long.len() < 60 {
            long.push(v.must("so"));
        }
        let a = Answer::from_parts(&long, s.label_tokens(Label(0)), &v);
        assert!((j.score(&s, &ex, &a, &v) - (4.5 - 0.2)).abs() < 1e-12);
    }

    #[test]
    fn rank_positions_and_ties() {
        let v = JudgeVerdict::from_scores(vec![4.5, 1.5, 2.5]);
        assert_eq!(v.positions, vec![1, 3, 2]);
        assert_eq!(v.order(), vec![0, 2, 1]);
        let v = JudgeVerdict::from_scores(vec![1.0, 1.0 + 1e-9, f64::NEG_INFINITY, f64::NEG_INFINITY]);
        assert_eq!(v.positions, vec![1, 1, 3, 3]);
        assert!(v.tied(2, 3));
    }

    #[test]
    fn rank_requires_two_answers_and_is_order_invariant() {
        let (v, s, ex) = polarity();
        let j = Judge::default();
        let a = oracle_answer(&s, &ex, Label(0), &v, &mut stream(1, &[])).unwrap();
        let b = oracle_answer(&s, &ex, Label(1), &v, &mut stream(1, &[])).unwrap();
        let c = Answer(vec![v.must("so")]);
        assert!(j.rank(&s, &ex, std::slice::from_ref(&a), &v).is_err());
        let fwd = j.rank(&s, &ex, &[a.clone(), b.clone(), c.clone()], &v).unwrap();
        let rev = j.rank(&s, &ex, &[c, b, a.clone()], &v).unwrap();
        let mut p = rev.positions.clone();
        p.reverse();
        assert_eq!(fwd.positions, p);
        let dup = j.rank(&s, &ex, &[a.clone(), a], &v).unwrap();
        assert!(dup.tied(0, 1));
    }
}
