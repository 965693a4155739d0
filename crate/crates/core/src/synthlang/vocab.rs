use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";
pub const ANS: &str = "<ans>";

const CONTROL: [&str; 4] = [BOS, EOS, SEP, ANS];
const DIGITS: [&str; 11] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "."];
const TEMPLATE: [&str; 24] = [
    "what", "sentiment", "topic", "rating", // question preambles
    "we", "see", "i", "count", "text", "has", "evidence", "shows", // rationale openers
    "so", "thus", "hence", "therefore", // rationale connectors
    "pos", "neg", // sentiment families
    "positive", "negative", "sports", "politics", "science", "business", // labels
];
const TASK: [&str; 30] = [
    "good", "great", "superb", "fine", // positive evidence
    "bad", "awful", "dull", "poor", // negative evidence
    "goal", "match", "team", // sports
    "vote", "law", "senate", // politics
    "atom", "cell", "theory", // science
    "market", "profit", "stock", // business
    "the", "a", "film", "story", "it", "was", "and", "of", "very", "this", // filler
];

/// Closed token inventory with dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocab {
    /// The vocabulary shared by every task: control tokens, digits, template
    /// words and task tokens, registered in that order.
    pub fn standard() -> Self {
        let symbols = CONTROL.iter().chain(&DIGITS).chain(&TEMPLATE).chain(&TASK);
        Self::from_symbols(symbols.map(|s| s.to_string()).collect()).expect("standard vocab is valid")
    }

    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() > 256 {
            return Err(Error::domain(format!("vocab has {} symbols, limit is 256", symbols.len())));
        }
        let mut ids = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::domain(format!("invalid vocab symbol {s:?}")));
            }
            if ids.insert(s.clone(), i as TokenId).is_some() {
                return Err(Error::domain(format!("duplicate vocab symbol {s:?}")));
            }
        }
        for c in CONTROL {
            if !ids.contains_key(c) {
                return Err(Error::domain(format!("vocab lacks control token {c}")));
            }
        }
        Ok(Self { symbols, ids })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.ids.get(symbol).copied()
    }

    /// Like [`Vocab::id`] for symbols the caller knows are registered.
    pub(crate) fn must(&self, symbol: &str) -> TokenId {
        self.id(symbol).unwrap_or_else(|| panic!("symbol {symbol:?} missing from vocab"))
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn bos(&self) -> TokenId {
        self.must(BOS)
    }
    pub fn eos(&self) -> TokenId {
        self.must(EOS)
    }
    pub fn sep(&self) -> TokenId {
        self.must(SEP)
    }
    pub fn ans(&self) -> TokenId {
        self.must(ANS)
    }

    /// Token id of a decimal digit.
    pub fn digit(&self, d: u32) -> TokenId {
        debug_assert!(d < 10);
        self.must(DIGITS[d as usize])
    }

    pub fn point(&self) -> TokenId {
        self.must(".")
    }

    /// Inverse of [`Vocab::digit`].
    pub fn digit_value(&self, id: TokenId) -> Option<u32> {
        self.symbol(id).and_then(|s| s.parse::<u32>().ok()).filter(|&d| d < 10)
    }

    pub fn encode_number(&self, n: u32) -> Vec<TokenId> {
        n.to_string().bytes().map(|b| self.digit(u32::from(b - b'0'))).collect()
    }

    /// Space-separated symbols, for logs and debugging.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &t) in tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            match self.symbol(t) {
                Some(s) => out.push_str(s),
                None => {
                    let _ = write!(out, "<{t}?>");
                }
            }
        }
        out
    }

    /// 64-bit FNV-1a over the newline-joined symbol list. Checkpoints carry it
    /// so models trained on different vocabularies cannot be mixed.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for s in &self.symbols {
            for b in s.bytes().chain(std::iter::once(b'\n')) {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// One symbol per line.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for s in &self.symbols {
            out.push_str(s);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::jsonl::write_text(path, &self.to_file_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_symbols(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    }
}
