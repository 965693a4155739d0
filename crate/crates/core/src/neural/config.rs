use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which output heads a model carries on top of the shared trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeadSet {
    pub lm: bool,
    pub value: bool,
    pub reward: bool,
}

impl HeadSet {
    pub const LM: HeadSet = HeadSet { lm: true, value: false, reward: false };
    pub const VALUE: HeadSet = HeadSet { lm: false, value: true, reward: false };
    pub const REWARD: HeadSet = HeadSet { lm: false, value: false, reward: true };
    pub const ALL: HeadSet = HeadSet { lm: true, value: true, reward: true };

    pub fn bits(self) -> u8 {
        u8::from(self.lm) | u8::from(self.value) << 1 | u8::from(self.reward) << 2
    }

    pub fn from_bits(b: u8) -> Option<Self> {
        (b < 8).then_some(HeadSet { lm: b & 1 != 0, value: b & 2 != 0, reward: b & 4 != 0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_set: HeadSet,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size, context_length: 128, width: 64, layers: 2, heads: 4, head_set: HeadSet::LM }
    }

    pub fn with_heads(self, head_set: HeadSet) -> Self {
        Self { head_set, ..self }
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::domain(format!("invalid model config {self:?}: {m}")));
        if self.vocab_size == 0 || self.context_length == 0 || self.width == 0 || self.heads == 0 {
            return bad("sizes must be positive");
        }
        if self.width % self.heads != 0 {
            return bad("width must be divisible by heads");
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (v, c, d) = (self.vocab_size, self.context_length, self.width);
        // the key projection has no bias: it would shift every score in a row equally
        let block = 12 * d * d + 12 * d;
        let mut n = v * d + c * d + self.layers * block + 2 * d;
        if self.head_set.lm {
            n += d * v + v;
        }
        if self.head_set.value {
            n += d + 1;
        }
        if self.head_set.reward {
            n += d + 1;
        }
        n
    }
}

/// Offsets of each tensor of one transformer block in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Canonical parameter order: embeddings, blocks, final norm, then the lm,
/// value and reward heads that are present. The trunk is a common prefix of
/// every head set, which is what lets a policy seed a reward or value model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub blocks: Vec<BlockLayout>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub lm: Option<(usize, usize)>,
    pub value: Option<(usize, usize)>,
    pub reward: Option<(usize, usize)>,
    pub trunk_len: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.width;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let tok_emb = take(cfg.vocab_size * d);
        let pos_emb = take(cfg.context_length * d);
        let blocks = (0..cfg.layers)
            .map(|_| BlockLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(4 * d * d),
                b1: take(4 * d),
                w2: take(4 * d * d),
                b2: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        let trunk_len = lnf_b + d;
        let lm = cfg.head_set.lm.then(|| (take(d * cfg.vocab_size), take(cfg.vocab_size)));
        let value = cfg.head_set.value.then(|| (take(d), take(1)));
        let reward = cfg.head_set.reward.then(|| (take(d), take(1)));
        Self { tok_emb, pos_emb, blocks, lnf_g, lnf_b, lm, value, reward, trunk_len, total: at }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_closed_form() {
        for heads in [HeadSet::LM, HeadSet::VALUE, HeadSet::REWARD, HeadSet::ALL] {
            for (v, c, d, l, h) in [(69, 128, 64, 2, 4), (10, 8, 16, 1, 2), (5, 3, 8, 0, 1)] {
                let cfg = ModelConfig { vocab_size: v, context_length: c, width: d, layers: l, heads: h, head_set: heads };
                assert_eq!(Layout::new(&cfg).total, cfg.param_count());
            }
        }
        // default policy: 69*64 + 128*64 + 2*(12*64*64 + 13*64) + 2*64 + 64*69 + 69
        let cfg = ModelConfig::new(69);
        assert_eq!(cfg.param_count(), 4416 + 8192 + 2 * (49152 + 768) + 128 + 4416 + 69);
    }

    #[test]
    fn trunk_is_shared_prefix() {
        let a = Layout::new(&ModelConfig::new(69).with_heads(HeadSet::LM));
        let b = Layout::new(&ModelConfig::new(69).with_heads(HeadSet::REWARD));
        assert_eq!(a.trunk_len, b.trunk_len);
        assert_eq!(a.blocks, b.blocks);
        assert_eq!(b.reward, Some((b.trunk_len, b.trunk_len + 64)));
    }

    #[test]
    fn head_bits_round_trip() {
        for b in 0..8 {
            assert_eq!(HeadSet::from_bits(b).unwrap().bits(), b);
        }
        assert!(HeadSet::from_bits(8).is_none());
    }

    #[test]
    fn validation() {
        let mut cfg = ModelConfig::new(10);
        assert!(cfg.validate().is_ok());
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
    }
}
