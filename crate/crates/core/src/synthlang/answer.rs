use rand::Rng;
use thiserror::Error;

use super::task::{Example, Label, TaskSpec};
use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Surface variants for the rationale's opening and closing slots.
const OPENERS: [&[&str]; 4] = [&["we", "see"], &["i", "count"], &["text", "has"], &["evidence", "shows"]];
const CONNECTORS: [&str; 4] = ["so", "thus", "hence", "therefore"];

/// Serialized answer tokens: rationale, the answer marker, the label, EOS.
///
/// Model samples are stored as-is, so an `Answer` may lack the marker or the
/// terminator; the accessors report what is actually present.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Answer(pub Vec<TokenId>);

impl Answer {
    pub fn from_parts(rationale: &[TokenId], label: &[TokenId], vocab: &Vocab) -> Self {
        let mut t = Vec::with_capacity(rationale.len() + label.len() + 2);
        t.extend_from_slice(rationale);
        t.push(vocab.ans());
        t.extend_from_slice(label);
        t.push(vocab.eos());
        Answer(t)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    fn last_marker(&self, vocab: &Vocab) -> Option<usize> {
        self.0.iter().rposition(|&t| t == vocab.ans())
    }

    /// Tokens before the last answer marker (everything if there is none).
    pub fn rationale(&self, vocab: &Vocab) -> &[TokenId] {
        &self.0[..self.last_marker(vocab).unwrap_or(self.0.len())]
    }

    /// Tokens between the last answer marker and EOS.
    pub fn label_tokens(&self, vocab: &Vocab) -> Option<&[TokenId]> {
        let start = self.last_marker(vocab)? + 1;
        let rest = &self.0[start..];
        let end = rest.iter().position(|&t| t == vocab.eos()).unwrap_or(rest.len());
        Some(&rest[..end])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no answer marker")]
    NoMarker,
    #[error("malformed label tokens")]
    Malformed,
    #[error("label value outside the label space")]
    OutOfRange,
}

/// Decodes the label that follows the last answer marker.
pub fn parse_label(tokens: &[TokenId], spec: &TaskSpec, vocab: &Vocab) -> Result<Label, ParseError> {
    let start = tokens.iter().rposition(|&t| t == vocab.ans()).ok_or(ParseError::NoMarker)? + 1;
    let rest = &tokens[start..];
    let body = &rest[..rest.iter().position(|&t| t == vocab.eos()).unwrap_or(rest.len())];
    if body.is_empty() {
        return Err(ParseError::Malformed);
    }
    if !spec.is_ordinal() {
        return match body {
            [t] => spec.labels().find(|&l| spec.label_tokens(l) == [*t]).ok_or(ParseError::Malformed),
            _ => Err(ParseError::Malformed),
        };
    }
    let mut text = String::with_capacity(body.len());
    let mut points = 0;
    for &t in body {
        if t == vocab.point() {
            points += 1;
            text.push('.');
        } else {
            let d = vocab.digit_value(t).ok_or(ParseError::Malformed)?;
            text.push(char::from_digit(d, 10).expect("digit"));
        }
    }
    if points > 1 || text.starts_with('.') || text.ends_with('.') {
        return Err(ParseError::Malformed);
    }
    let v: f64 = text.parse().map_err(|_| ParseError::Malformed)?;
    spec.label_for_value(v).ok_or(ParseError::OutOfRange)
}

/// Rationale tokens claiming `counts`, one claim per family in family order.
pub fn render_rationale(spec: &TaskSpec, counts: &[u32], variant: (usize, usize), vocab: &Vocab) -> Vec<TokenId> {
    let mut r: Vec<TokenId> = OPENERS[variant.0 % OPENERS.len()].iter().map(|w| vocab.must(w)).collect();
    for (fam, &c) in spec.families.iter().zip(counts) {
        r.push(fam.token);
        r.extend(vocab.encode_number(c));
    }
    r.push(vocab.must(CONNECTORS[variant.1 % CONNECTORS.len()]));
    r
}

/// A rationale supporting `label`, whether or not it is the gold label.
///
/// For the gold label the claimed counts are the true evidence; otherwise they
/// are the minimal re-attribution of evidence that implies `label`. The stream
/// only picks the surface variant.
pub fn oracle_rationale(
    spec: &TaskSpec,
    ex: &Example,
    label: Label,
    vocab: &Vocab,
    stream: &mut Stream,
) -> Result<Vec<TokenId>> {
    if !spec.contains(label) {
        return Err(Error::domain(format!("label index {} outside the {} label space", label.0, spec.task)));
    }
    let claimed = spec.perturb_counts(&ex.evidence, label);
    let variant = (stream.gen_range(0..OPENERS.len()), stream.gen_range(0..CONNECTORS.len()));
    Ok(render_rationale(spec, &claimed, variant, vocab))
}

/// Full oracle answer for `label`: rationale, marker, label, EOS.
pub fn oracle_answer(spec: &TaskSpec, ex: &Example, label: Label, vocab: &Vocab, stream: &mut Stream) -> Result<Answer> {
    let r = oracle_rationale(spec, ex, label, vocab, stream)?;
    Ok(Answer::from_parts(&r, spec.label_tokens(label), vocab))
}

/// Evidence claims in a rationale: a family token followed by one or more
/// digits. The first claim per family wins; other tokens are ignored.
pub fn claimed_counts(spec: &TaskSpec, rationale: &[TokenId], vocab: &Vocab) -> Vec<Option<u32>> {
    let mut claims = vec![None; spec.families.len()];
    let mut i = 0;
    while i < rationale.len() {
        if let Some(f) = spec.families.iter().position(|f| f.token == rationale[i]) {
            let mut j = i + 1;
            let mut n: Option<u32> = None;
            while let Some(d) = rationale.get(j).and_then(|&t| vocab.digit_value(t)) {
                n = Some(n.unwrap_or(0).saturating_mul(10).saturating_add(d));
                j += 1;
            }
            if let (Some(n), None) = (n, claims[f]) {
                claims[f] = Some(n);
            }
            i = j.max(i + 1);
        } else {
            i += 1;
        }
    }
    claims
}
