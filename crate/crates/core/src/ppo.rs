//! KL-penalized PPO against label, rationale or mixed rewards.
//!
//! The KL term against the frozen reference enters as per-token reward
//! shaping; the reward-model scalar is added at the final answer token.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::label_accuracy;
use crate::neural::{
    adam_step, clip_grad_norm, loss_and_grads, sample, sequence_log_probs, AdamState, Batch, HeadSet, ModelCheckpoint,
    PolicyItem, Role, ValueItem,
};
use crate::reward::score;
use crate::rng::{stream, tag};
use crate::synthlang::{Example, Task, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Rationale reward only.
    Rlhf,
    /// Label reward only.
    Rllr,
    /// Label reward truncated at the threshold plus rationale reward.
    Mixed,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Rlhf, Mode::Rllr, Mode::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Rlhf => "rlhf",
            Mode::Rllr => "rllr",
            Mode::Mixed => "mixed",
        }
    }
    pub fn needs_label_rm(self) -> bool {
        self != Mode::Rlhf
    }
    pub fn needs_rationale_rm(self) -> bool {
        self != Mode::Rllr
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown ppo mode {s:?} (expected rlhf, rllr or mixed)")))
    }
}

/// `r1 + r2` below the threshold, `λ + r2` at or above it.
pub fn mixed_reward(r1: f64, r2: f64, lambda: f64) -> f64 {
    if r1 < lambda {
        r1 + r2
    } else {
        lambda + r2
    }
}

pub fn assemble_reward(mode: Mode, r1: f64, r2: f64, lambda: f64) -> f64 {
    match mode {
        Mode::Rlhf => r2,
        Mode::Rllr => r1,
        Mode::Mixed => mixed_reward(r1, r2, lambda),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub mode: Mode,
    /// Threshold on the label reward; `None` derives it from SFT samples.
    pub lambda: Option<f64>,
    pub beta: f64,
    pub clip: f64,
    pub value_clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Prompts per rollout.
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub value_lr: f64,
    pub max_grad_norm: f64,
    pub iterations: usize,
    /// Supplied by the caller rather than read from config files.
    #[serde(skip)]
    pub seed: u64,
    pub temperature: f64,
    pub max_new: usize,
    /// Samples used to derive the default threshold.
    pub lambda_samples: usize,
    pub lambda_quantile: f64,
    /// Snapshot the policy every this many iterations (0: never).
    pub snapshot_every: usize,
    /// Evaluate greedy accuracy every this many iterations (0: never).
    pub eval_every: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Rllr,
            lambda: None,
            beta: 0.2,
            clip: 0.2,
            value_clip: 0.2,
            gamma: 1.0,
            gae_lambda: 0.95,
            batch_size: 64,
            epochs: 4,
            lr: 1e-6,
            value_lr: 1e-4,
            max_grad_norm: 1.0,
            iterations: 30,
            seed: 0,
            temperature: 1.0,
            max_new: crate::eval::MAX_NEW,
            lambda_samples: 256,
            lambda_quantile: 0.8,
            snapshot_every: 0,
            eval_every: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::domain(m));
        if let Some(l) = self.lambda {
            if !l.is_finite() {
                return bad(format!("lambda must be finite, got {l}"));
            }
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad(format!("clip must lie in (0, 1), got {}", self.clip));
        }
        if !(self.value_clip > 0.0) {
            return bad(format!("value_clip must be > 0, got {}", self.value_clip));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gamma {} and gae_lambda {} must lie in [0, 1]", self.gamma, self.gae_lambda));
        }
        if self.batch_size == 0 || self.max_new == 0 {
            return bad("batch_size and max_new must be positive".into());
        }
        if !(self.lr >= 0.0 && self.value_lr >= 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning rates must be >= 0 and max_grad_norm > 0".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("rollout temperature must be > 0, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.lambda_quantile) || self.lambda_samples == 0 {
            return bad("lambda_quantile must lie in [0, 1] with lambda_samples > 0".into());
        }
        Ok(())
    }
}

/// Reward models available to a run; the mode decides which are required.
#[derive(Debug, Clone, Copy, Default)]
pub struct RewardModels<'a> {
    pub label: Option<&'a ModelCheckpoint>,
    pub rationale: Option<&'a ModelCheckpoint>,
}

impl RewardModels<'_> {
    pub fn check(&self, mode: Mode, fingerprint: u64) -> Result<()> {
        let need = [(mode.needs_label_rm(), self.label, Role::RewardLabel), (mode.needs_rationale_rm(), self.rationale, Role::RewardRationale)];
        for (required, rm, role) in need {
            match rm {
                None if required => return Err(Error::domain(format!("mode {mode} needs a {} checkpoint", role.name()))),
                Some(m) if m.vocab_fingerprint != fingerprint => {
                    return Err(Error::domain(format!("{} checkpoint was trained on a different vocab", role.name())))
                }
                Some(m) if !m.config.head_set.reward => {
                    return Err(Error::domain(format!("{} checkpoint has no reward head", role.name())))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// A prompt from the unsupervised pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub id: u64,
    pub question: Vec<TokenId>,
}

impl Prompt {
    pub fn from_examples(task: &Task, examples: &[Example]) -> Vec<Prompt> {
        examples.iter().map(|ex| Prompt { id: ex.id, question: task.question(ex) }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub prompt_id: u64,
    pub question: Vec<TokenId>,
    pub answer: Vec<TokenId>,
    pub behavior_log_probs: Vec<f64>,
    pub reference_log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub terminal_reward: f64,
    pub shaped_rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// False when the sample hit `max_new` without EOS.
    pub terminated: bool,
}

impl Trajectory {
    pub fn tokens(&self) -> Vec<TokenId> {
        [self.question.as_slice(), &self.answer].concat()
    }

    /// `log π(a|q) − log π_ref(a|q)`.
    pub fn seq_kl(&self) -> f64 {
        self.behavior_log_probs.iter().sum::<f64>() - self.reference_log_probs.iter().sum::<f64>()
    }

    /// Sum of the shaping terms without the terminal reward.
    fn kl_terms(&self) -> f64 {
        self.shaped_rewards.iter().sum::<f64>() - self.terminal_reward
    }
}

/// Per-token rewards: `−β·(behavior − reference)`, plus `terminal` on the last token.
pub fn shape_rewards(behavior: &[f64], reference: &[f64], beta: f64, terminal: f64) -> Vec<f64> {
    let mut out: Vec<f64> = behavior.iter().zip(reference).map(|(b, r)| -beta * (b - r)).collect();
    if let Some(last) = out.last_mut() {
        *last += terminal;
    }
    out
}

/// Generalized advantage estimation with a zero bootstrap after the last token.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales `xs` to mean 0 and variance 1.
pub fn whiten(xs: &mut [f64]) {
    let n = xs.len();
    if n < 2 {
        return;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let inv = 1.0 / (var + 1e-8).sqrt();
    for x in xs.iter_mut() {
        *x = (*x - mean) * inv;
    }
}

/// Value model: the SFT trunk under a zero value head.
pub fn value_init(sft: &ModelCheckpoint) -> ModelCheckpoint {
    sft.with_heads(HeadSet::VALUE, Role::Value, &mut stream(0, &[]))
}

/// The policy keeps only its language-model head.
pub fn policy_init(sft: &ModelCheckpoint) -> Result<ModelCheckpoint> {
    if !sft.config.head_set.lm {
        return Err(Error::domain("policy checkpoint needs a language-model head"));
    }
    Ok(sft.clone().with_role(Role::Policy))
}

fn r_scores(rewards: &RewardModels<'_>, tokens: &[TokenId]) -> Result<(Option<f64>, Option<f64>)> {
    let r1 = rewards.label.map(|m| score(m, tokens)).transpose()?;
    let r2 = rewards.rationale.map(|m| score(m, tokens)).transpose()?;
    Ok((r1, r2))
}

/// Samples one answer per prompt and fills in rewards, values and advantages.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    policy: &ModelCheckpoint,
    reference: &ModelCheckpoint,
    rewards: &RewardModels<'_>,
    value_model: &ModelCheckpoint,
    prompts: &[Prompt],
    cfg: &PpoConfig,
    lambda: f64,
    iteration: usize,
    eos: TokenId,
) -> Result<Vec<Trajectory>> {
    rewards.check(cfg.mode, policy.vocab_fingerprint)?;
    if reference.vocab_fingerprint != policy.vocab_fingerprint || value_model.vocab_fingerprint != policy.vocab_fingerprint {
        return Err(Error::domain("policy, reference and value model vocab fingerprints differ"));
    }
    let mut out = Vec::with_capacity(prompts.len());
    for p in prompts {
        let mut s = stream(cfg.seed, &[tag::PPO, iteration as u64, p.id]);
        let smp = sample(policy, &p.question, cfg.temperature, cfg.max_new, eos, &mut s)?;
        if smp.tokens.is_empty() {
            return Err(Error::domain("rollout produced an empty answer"));
        }
        let tokens = [p.question.as_slice(), &smp.tokens].concat();
        let start = p.question.len();
        // recomputed in one forward pass so the first PPO ratio is exactly 1
        let behavior = sequence_log_probs(policy, &tokens, start)?;
        let reference_lp = sequence_log_probs(reference, &tokens, start)?;
        let all_values = value_model
            .forward(&tokens)?
            .values
            .ok_or_else(|| Error::domain("value model has no value head"))?;
        let values = all_values[start - 1..tokens.len() - 1].to_vec();
        let (r1, r2) = r_scores(rewards, &tokens)?;
        let terminal = assemble_reward(cfg.mode, r1.unwrap_or(0.0), r2.unwrap_or(0.0), lambda);
        let shaped = shape_rewards(&behavior, &reference_lp, cfg.beta, terminal);
        let (advantages, returns) = compute_gae(&shaped, &values, cfg.gamma, cfg.gae_lambda);
        let t = Trajectory {
            prompt_id: p.id,
            question: p.question.clone(),
            answer: smp.tokens,
            behavior_log_probs: behavior,
            reference_log_probs: reference_lp,
            values,
            r1,
            r2,
            terminal_reward: terminal,
            shaped_rewards: shaped,
            advantages,
            returns,
            terminated: smp.terminated,
        };
        let expect = -cfg.beta * t.seq_kl();
        if (t.kl_terms() - expect).abs() > 1e-9 * (1.0 + expect.abs()) {
            return Err(Error::Numeric(format!("kl shaping sums to {} instead of {expect}", t.kl_terms())));
        }
        out.push(t);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    /// Mean over PPO epochs of the loss at each epoch's gradient evaluation.
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Share of token ratios with `|ρ − 1| > clip`, over all epochs.
    pub clip_fraction: f64,
    pub ratios: Vec<f64>,
}

/// Optimizer state carried across iterations.
#[derive(Debug, Clone)]
pub struct PpoOptim {
    pub policy: AdamState,
    pub value: AdamState,
}

impl PpoOptim {
    pub fn new(policy: &ModelCheckpoint, value: &ModelCheckpoint) -> Self {
        Self { policy: AdamState::new(policy.params.len()), value: AdamState::new(value.params.len()) }
    }
}

/// `cfg.epochs` clipped-surrogate and clipped-value steps over the whole rollout.
/// On a non-finite loss both models are left untouched.
pub fn ppo_update(
    policy: &mut ModelCheckpoint,
    value_model: &mut ModelCheckpoint,
    trajs: &[Trajectory],
    cfg: &PpoConfig,
    optim: &mut PpoOptim,
) -> Result<UpdateStats> {
    if trajs.is_empty() {
        return Err(Error::domain("no trajectories to learn from"));
    }
    let mut adv: Vec<f64> = trajs.iter().flat_map(|t| t.advantages.iter().copied()).collect();
    whiten(&mut adv);
    let mut policy_items = Vec::with_capacity(trajs.len());
    let mut value_items = Vec::with_capacity(trajs.len());
    let mut off = 0;
    for t in trajs {
        let n = t.answer.len();
        let tokens = t.tokens();
        policy_items.push(PolicyItem {
            tokens: tokens.clone(),
            start: t.question.len(),
            old_log_probs: t.behavior_log_probs.clone(),
            advantages: adv[off..off + n].to_vec(),
        });
        value_items.push(ValueItem { tokens, start: t.question.len(), old_values: t.values.clone(), returns: t.returns.clone() });
        off += n;
    }
    let (mut new_policy, mut new_value) = (policy.clone(), value_model.clone());
    let (mut new_optim, mut ratios) = (optim.clone(), Vec::new());
    let (mut pl, mut vl) = (0.0, 0.0);
    for _ in 0..cfg.epochs {
        let mut p = loss_and_grads(&new_policy, Batch::PpoPolicy { items: &policy_items, clip: cfg.clip }, true)?;
        clip_grad_norm(&mut p.grads, cfg.max_grad_norm);
        adam_step(&mut new_policy, &p.grads, &mut new_optim.policy, cfg.lr)?;
        let mut v = loss_and_grads(&new_value, Batch::PpoValue { items: &value_items, clip: cfg.value_clip }, true)?;
        clip_grad_norm(&mut v.grads, cfg.max_grad_norm);
        adam_step(&mut new_value, &v.grads, &mut new_optim.value, cfg.value_lr)?;
        if new_policy.params.iter().chain(&new_value.params).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite parameters after a ppo step".into()));
        }
        pl += p.loss;
        vl += v.loss;
        ratios.extend(p.ratios);
    }
    let clipped = ratios.iter().filter(|r| (*r - 1.0).abs() > cfg.clip).count();
    let epochs = cfg.epochs.max(1) as f64;
    let clip_fraction = if ratios.is_empty() { 0.0 } else { clipped as f64 / ratios.len() as f64 };
    *policy = new_policy;
    *value_model = new_value;
    *optim = new_optim;
    Ok(UpdateStats { policy_loss: pl / epochs, value_loss: vl / epochs, clip_fraction, ratios })
}

/// Linear-interpolation quantile of `xs`.
pub fn quantile(xs: &[f64], q: f64) -> Option<f64> {
    if xs.is_empty() || xs.iter().any(|x| x.is_nan()) {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Quantile of label-reward scores over policy samples drawn from `prompts`.
pub fn default_lambda(policy: &ModelCheckpoint, label_rm: &ModelCheckpoint, prompts: &[Prompt], cfg: &PpoConfig, eos: TokenId) -> Result<f64> {
    if prompts.is_empty() {
        return Err(Error::domain("no prompts to derive the reward threshold from"));
    }
    let mut s = stream(cfg.seed, &[tag::THRESHOLD]);
    let mut scores = Vec::with_capacity(cfg.lambda_samples);
    for i in 0..cfg.lambda_samples {
        let p = &prompts[i % prompts.len()];
        let smp = sample(policy, &p.question, cfg.temperature, cfg.max_new, eos, &mut s)?;
        scores.push(score(label_rm, &[p.question.as_slice(), &smp.tokens].concat())?);
    }
    quantile(&scores, cfg.lambda_quantile).ok_or_else(|| Error::Numeric("label reward produced NaN".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterMetric {
    pub iter: usize,
    pub mode: Mode,
    pub mean_terminal_reward: f64,
    pub mean_r1: Option<f64>,
    pub mean_r2: Option<f64>,
    pub mean_seq_kl: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub eval_accuracy: Option<f64>,
}

pub fn metrics_csv(metrics: &[IterMetric]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
    let mut out = String::from(
        "iter,mode,mean_terminal_reward,mean_r1,mean_r2,mean_seq_kl,clip_fraction,policy_loss,value_loss,eval_accuracy\n",
    );
    for m in metrics {
        out.push_str(&format!(
            "{},{},{:.9},{},{},{:.9},{:.6},{:.9},{:.9},{}\n",
            m.iter,
            m.mode,
            m.mean_terminal_reward,
            opt(m.mean_r1),
            opt(m.mean_r2),
            m.mean_seq_kl,
            m.clip_fraction,
            m.policy_loss,
            m.value_loss,
            opt(m.eval_accuracy)
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct PpoOutcome {
    pub policy: ModelCheckpoint,
    pub value: ModelCheckpoint,
    pub lambda: f64,
    pub metrics: Vec<IterMetric>,
    pub snapshots: Vec<(usize, ModelCheckpoint)>,
    /// Set when an iteration hit a numeric failure; the models are the last good ones.
    pub diverged: Option<String>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// rollout → GAE → update for `cfg.iterations`, with the SFT checkpoint as
/// frozen reference.
pub fn train_ppo(
    sft: &ModelCheckpoint,
    rewards: &RewardModels<'_>,
    prompts: &[Prompt],
    cfg: &PpoConfig,
    task: &Task,
    eval_set: &[Example],
) -> Result<PpoOutcome> {
    cfg.validate()?;
    rewards.check(cfg.mode, sft.vocab_fingerprint)?;
    if sft.vocab_fingerprint != task.vocab.fingerprint() {
        return Err(Error::domain("sft checkpoint was trained on a different vocab"));
    }
    if prompts.is_empty() {
        return Err(Error::domain("prompt pool is empty"));
    }
    let eos = task.vocab.eos();
    let reference = sft;
    let mut policy = policy_init(sft)?;
    let mut value = value_init(sft);
    let lambda = match (cfg.lambda, cfg.mode, rewards.label) {
        (Some(l), _, _) => l,
        (None, Mode::Mixed, Some(rm)) => default_lambda(&policy, rm, prompts, cfg, eos)?,
        // unused outside mixed mode
        (None, _, _) => f64::INFINITY,
    };
    let mut optim = PpoOptim::new(&policy, &value);
    let mut out = PpoOutcome { policy: policy.clone(), value: value.clone(), lambda, metrics: Vec::new(), snapshots: Vec::new(), diverged: None };
    for iter in 0..cfg.iterations {
        let n = cfg.batch_size.min(prompts.len());
        let picks = index::sample(&mut stream(cfg.seed, &[tag::PPO, u64::MAX, iter as u64]), prompts.len(), n).into_vec();
        let batch: Vec<Prompt> = picks.into_iter().map(|i| prompts[i].clone()).collect();
        let step = rollout(&policy, reference, rewards, &value, &batch, cfg, lambda, iter, eos)
            .and_then(|trajs| ppo_update(&mut policy, &mut value, &trajs, cfg, &mut optim).map(|s| (trajs, s)));
        let (trajs, stats) = match step {
            Ok(v) => v,
            Err(Error::Numeric(msg)) => {
                out.diverged = Some(format!("iteration {iter}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let done = iter + 1;
        let eval_accuracy = if cfg.eval_every > 0 && done % cfg.eval_every == 0 && !eval_set.is_empty() {
            Some(label_accuracy(&policy, task, eval_set)?)
        } else {
            None
        };
        let opt_mean = |f: fn(&Trajectory) -> Option<f64>| trajs.iter().map(f).collect::<Option<Vec<f64>>>().map(|v| mean(v.into_iter()));
        out.metrics.push(IterMetric {
            iter: done,
            mode: cfg.mode,
            mean_terminal_reward: mean(trajs.iter().map(|t| t.terminal_reward)),
            mean_r1: opt_mean(|t| t.r1),
            mean_r2: opt_mean(|t| t.r2),
            mean_seq_kl: mean(trajs.iter().map(Trajectory::seq_kl)),
            clip_fraction: stats.clip_fraction,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            eval_accuracy,
        });
        out.policy = policy.clone();
        out.value = value.clone();
        if cfg.snapshot_every > 0 && done % cfg.snapshot_every == 0 {
            out.snapshots.push((done, policy.clone()));
        }
    }
    Ok(out)
}
