//! Run configuration in a flat `section.key = value` text format.
//!
//! Every key has a default; unknown or repeated keys are errors. The resolved
//! configuration is written back in the same format with every key present.

use anyhow::{anyhow, bail, Context, Result};
use rllr::ppo::PpoConfig;
use rllr::synthlang::{JudgeWeights, TaskId};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub tasks: Vec<TaskId>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 7, tasks: TaskId::ALL.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_train: usize,
    pub n_test: usize,
    pub n_unsup: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { n_train: 2000, n_test: 500, n_unsup: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub context_length: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { width: 64, layers: 2, heads: 4, context_length: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Without rationales the target is just the marker and the label.
    pub with_rationale: bool,
}

impl Default for SftSection {
    fn default() -> Self {
        let h = rllr::sft::SftHyper::default();
        Self { lr: h.lr, batch_size: h.batch_size, epochs: h.epochs, with_rationale: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairsSection {
    /// Samples ranked per prompt.
    pub k: usize,
    pub temperature: f64,
    pub max_new: usize,
    /// Unsupervised-pool prompts used for ranked pairs.
    pub prompts: usize,
    /// Wrong labels per example for label-sensitive pairs.
    pub n_pairs: usize,
}

impl Default for PairsSection {
    fn default() -> Self {
        Self { k: 5, temperature: 0.8, max_new: rllr::eval::MAX_NEW, prompts: 500, n_pairs: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub lr: f64,
    pub batch_size: usize,
    pub label_epochs: usize,
    pub rationale_epochs: usize,
    /// Ranked pairs the rationale reward model trains on: `rationale_sensitive` or `all`.
    pub rationale_kinds: String,
}

impl Default for RewardSection {
    fn default() -> Self {
        use rllr::neural::Role;
        let (l, r) = (rllr::reward::RmHyper::for_role(Role::RewardLabel), rllr::reward::RmHyper::for_role(Role::RewardRationale));
        Self {
            lr: l.lr,
            batch_size: l.batch_size,
            label_epochs: l.epochs,
            rationale_epochs: r.epochs,
            rationale_kinds: "rationale_sensitive".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub max_new: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { max_new: rllr::eval::MAX_NEW }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub sft: SftSection,
    pub pairs: PairsSection,
    pub reward: RewardSection,
    pub ppo: PpoConfig,
    pub judge: JudgeWeights,
    pub eval: EvalSection,
}

fn scalar(raw: &str, current: &Value, key: &str) -> Result<Value> {
    let bad = |what: &str| anyhow!("{key}: expected {what}, got {raw:?}");
    Ok(match current {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad("true or false"))?),
        Value::Number(n) if n.is_f64() => {
            let x: f64 = raw.parse().map_err(|_| bad("a number"))?;
            serde_json::Number::from_f64(x).map(Value::Number).ok_or_else(|| bad("a finite number"))?
        }
        Value::Number(_) => Value::from(raw.parse::<u64>().map_err(|_| bad("a non-negative integer"))?),
        Value::String(_) => Value::String(raw.to_string()),
        Value::Array(_) => Value::Array(
            raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| Value::String(s.to_string())).collect(),
        ),
        // optional numbers: `auto` leaves them unset
        Value::Null if raw == "auto" => Value::Null,
        Value::Null => {
            let x: f64 = raw.parse().map_err(|_| bad("a number or auto"))?;
            serde_json::Number::from_f64(x).map(Value::Number).ok_or_else(|| bad("a finite number"))?
        }
        Value::Object(_) => bail!("{key} names a section, not a key"),
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut tree = serde_json::to_value(Self::default())?;
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ctx = || format!("config line {}", i + 1);
            let (key, raw) = line.split_once('=').ok_or_else(|| anyhow!("expected `section.key = value`")).with_context(ctx)?;
            let (key, raw) = (key.trim(), raw.trim());
            let (section, field) = key.split_once('.').ok_or_else(|| anyhow!("key {key:?} has no section prefix")).with_context(ctx)?;
            if !seen.insert(key.to_string()) {
                return Err(anyhow!("key {key} is set twice")).with_context(ctx);
            }
            let slot = tree
                .get_mut(section)
                .and_then(|s| s.get_mut(field))
                .ok_or_else(|| anyhow!("unknown key {key}"))
                .with_context(ctx)?;
            *slot = scalar(raw, slot, key).with_context(ctx)?;
        }
        let cfg: Self = serde_json::from_value(tree).context("config values")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.tasks.is_empty() {
            bail!("run.tasks is empty");
        }
        if !matches!(self.reward.rationale_kinds.as_str(), "rationale_sensitive" | "all") {
            bail!("reward.rationale_kinds must be rationale_sensitive or all, got {:?}", self.reward.rationale_kinds);
        }
        if self.pairs.k < 2 || self.pairs.n_pairs == 0 {
            bail!("pairs.k must be at least 2 and pairs.n_pairs at least 1");
        }
        self.ppo.validate()?;
        Ok(())
    }

    /// Every key, one per line, sections and keys in sorted order.
    pub fn to_text(&self) -> String {
        let tree = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (section, fields) in tree.as_object().expect("object") {
            for (key, v) in fields.as_object().expect("section object") {
                let value = match v {
                    Value::Null => "auto".to_string(),
                    Value::String(s) => s.clone(),
                    Value::Array(items) => items.iter().map(|x| x.as_str().unwrap_or_default().to_string()).collect::<Vec<_>>().join(","),
                    other => other.to_string(),
                };
                out.push_str(&format!("{section}.{key} = {value}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = RunConfig::parse("run.seed = 11\nrun.tasks = polarity, rating\nppo.lambda = 2.5 # fixed\nppo.mode = mixed\n").unwrap();
        assert_eq!(cfg.run.seed, 11);
        assert_eq!(cfg.run.tasks, vec![TaskId::Polarity, TaskId::Rating]);
        assert_eq!(cfg.ppo.lambda, Some(2.5));
        let text = cfg.to_text();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
        assert!(text.contains("ppo.lambda = 2.5\n") && text.contains("sft.lr = 0.0003\n"));
    }

    #[test]
    fn strictness() {
        for bad in [
            "sft.learning_rate = 1",
            "nosection = 1",
            "ppo = 1",
            "run.seed = -1",
            "sft.epochs = 2.5",
            "sft.lr = fast",
            "run.seed = 1\nrun.seed = 2",
            "run.tasks = polarity, sentiment",
            "ppo.clip = 1.5",
            "ppo.seed = 3",
            "reward.rationale_kinds = some",
        ] {
            assert!(RunConfig::parse(bad).is_err(), "{bad} accepted");
        }
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("ppo.lambda = auto").unwrap().ppo.lambda, None);
    }
}
