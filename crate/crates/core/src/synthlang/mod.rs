//! Synthetic micro-NLU tasks with fully observable evidence.
//!
//! Each task hides a handful of evidence words among filler; the label is a
//! fixed function of the per-family evidence counts. Rationales state those
//! counts, so a rationale can be checked for factuality and for consistency
//! with the label it ends in, which is what the deterministic [`Judge`] does.

mod answer;
mod judge;
mod task;
mod vocab;

pub use answer::{
    claimed_counts, oracle_answer, oracle_rationale, parse_label, render_rationale, Answer, ParseError,
};
pub use judge::{compare_scores, Judge, JudgeVerdict, JudgeWeights, TIE_EPS};
pub use task::{Example, ExampleRecord, Family, Label, TaskId, TaskSpec, RATING_SCORED};
pub use vocab::{TokenId, Vocab, ANS, BOS, EOS, SEP};

/// The vocabulary together with the spec of one task, which is what almost
/// every operation needs.
#[derive(Debug, Clone)]
pub struct Task {
    pub vocab: Vocab,
    pub spec: TaskSpec,
}

impl Task {
    pub fn new(task: TaskId) -> Self {
        let vocab = Vocab::standard();
        let spec = TaskSpec::new(task, &vocab);
        Self { vocab, spec }
    }

    pub fn id(&self) -> TaskId {
        self.spec.task
    }

    pub fn question(&self, ex: &Example) -> Vec<TokenId> {
        self.spec.render_question(ex, &self.vocab)
    }

    pub fn parse(&self, tokens: &[TokenId]) -> Result<Label, ParseError> {
        parse_label(tokens, &self.spec, &self.vocab)
    }

    /// Generates `n` examples with ids `first_id..first_id + n`, each from its
    /// own stream derived from `(seed, task, id)`.
    pub fn generate(&self, seed: u64, first_id: u64, n: usize) -> Vec<Example> {
        (first_id..first_id + n as u64)
            .map(|id| self.spec.gen_example(id, &mut crate::rng::stream(seed, &[crate::rng::tag::DATA, self.id().tag(), id])))
            .collect()
    }
}
