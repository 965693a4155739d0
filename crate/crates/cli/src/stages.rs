//! One function per pipeline stage.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rllr::eval::{greedy_answers, mean_judge_score, rating_pearson, win_counts, accuracy_of};
use rllr::neural::{checkpoint, ModelCheckpoint, ModelConfig, Role};
use rllr::pairs::{build_label_pairs, build_ranked_pairs, pair_stats, stats_csv, validate_pair, ComparisonPair, PairKind, RankedHyper};
use rllr::ppo::{self, Mode, Prompt, RewardModels};
use rllr::reward::{self, check_disjoint, rm_eval, RmHyper};
use rllr::rng::{stream, tag};
use rllr::sft::{self, build_sft_dataset, SftHyper};
use rllr::synthlang::{Example, ExampleRecord, Judge, Task, TaskId};

use crate::config::RunConfig;
use crate::run::{refuse, RunDir, StageWriter};

/// First example id of each pool; pools are disjoint by construction.
pub const TRAIN_BASE: u64 = 0;
pub const TEST_BASE: u64 = 1_000_000;
pub const UNSUP_BASE: u64 = 2_000_000;
const POOL_CAP: usize = 1_000_000;

pub const METHODS: [&str; 4] = ["sft", "rlhf", "rllr", "mixed"];

pub fn data_dir(task: TaskId) -> String {
    format!("data/{task}")
}
pub fn sft_dir(task: TaskId) -> String {
    format!("sft/{task}")
}
pub fn pairs_dir(task: TaskId) -> String {
    format!("pairs/{task}")
}
pub fn rm_dir(task: TaskId) -> String {
    format!("rm/{task}")
}
pub fn ppo_dir(mode: Mode, task: TaskId) -> String {
    format!("ppo-{mode}/{task}")
}
pub fn eval_dir(task: TaskId) -> String {
    format!("eval/{task}")
}

/// Checkpoint of a method's final policy, relative to the run root.
pub fn policy_path(method: &str, task: TaskId) -> String {
    match method {
        "sft" => format!("{}/policy.ckpt", sft_dir(task)),
        mode => format!("ppo-{mode}/{task}/policy.ckpt"),
    }
}

fn jsonl_bytes<T: serde::Serialize>(rows: &[T]) -> Vec<u8> {
    rllr::jsonl::to_string(rows).into_bytes()
}

fn read_pool(w: &mut StageWriter<'_>, task: &Task, name: &str) -> Result<Vec<Example>> {
    let path = w.input(&format!("{}/{name}.jsonl", data_dir(task.id())))?;
    let recs: Vec<ExampleRecord> = rllr::jsonl::read(&path)?;
    recs.into_iter().map(|r| Example::from_record(r, &task.spec).map_err(Into::into)).collect()
}

fn load_ckpt(w: &mut StageWriter<'_>, rel: &str, task: &Task) -> Result<ModelCheckpoint> {
    let path = w.input(rel)?;
    let ckpt = checkpoint::load(&path)?;
    if ckpt.vocab_fingerprint != task.vocab.fingerprint() {
        return refuse(format!("{rel} was trained on a different vocabulary"));
    }
    Ok(ckpt)
}

fn ckpt_bytes(m: &ModelCheckpoint) -> Vec<u8> {
    checkpoint::encode(m)
}

pub fn gen_data(run: &RunDir, cfg: &RunConfig, force: bool) -> Result<()> {
    for n in [cfg.data.n_train, cfg.data.n_test, cfg.data.n_unsup] {
        if n > POOL_CAP {
            bail!("pool sizes are limited to {POOL_CAP} examples, got {n}");
        }
    }
    for &id in &cfg.run.tasks {
        let task = Task::new(id);
        let mut w = StageWriter::begin(run, &data_dir(id), "gen-data", cfg.to_text(), force)?;
        let pools = [("train", TRAIN_BASE, cfg.data.n_train), ("test", TEST_BASE, cfg.data.n_test), ("unsup", UNSUP_BASE, cfg.data.n_unsup)];
        for (name, base, n) in pools {
            let recs: Vec<ExampleRecord> = task.generate(cfg.run.seed, base, n).iter().map(|e| e.to_record(&task.spec)).collect();
            w.write(&format!("{name}.jsonl"), &jsonl_bytes(&recs))?;
        }
        w.write("vocab.txt", task.vocab.to_file_string().as_bytes())?;
        w.finish()?;
    }
    Ok(())
}

pub fn train_sft(run: &RunDir, cfg: &RunConfig, force: bool) -> Result<()> {
    for &id in &cfg.run.tasks {
        let task = Task::new(id);
        let mut w = StageWriter::begin(run, &sft_dir(id), "train-sft", cfg.to_text(), force)?;
        let train = read_pool(&mut w, &task, "train")?;
        let ds = build_sft_dataset(&task, &train, cfg.run.seed, cfg.model.context_length, cfg.sft.with_rationale)?;
        if ds.records.is_empty() {
            return refuse(format!("{id}: no usable SFT records ({} rejected for length)", ds.rejected));
        }
        let mc = ModelConfig {
            width: cfg.model.width,
            layers: cfg.model.layers,
            heads: cfg.model.heads,
            context_length: cfg.model.context_length,
            ..ModelConfig::new(task.vocab.len())
        };
        let init = ModelCheckpoint::init(mc, Role::Policy, task.vocab.fingerprint(), &mut stream(cfg.run.seed, &[tag::INIT, id.tag()]))?;
        let hyper = SftHyper { lr: cfg.sft.lr, batch_size: cfg.sft.batch_size, epochs: cfg.sft.epochs, seed: cfg.run.seed };
        let out = sft::train_sft(&init, &ds.records, &hyper)?;
        w.write("sft_data.jsonl", &jsonl_bytes(&ds.records))?;
        w.write("policy.ckpt", &ckpt_bytes(&out.model))?;
        w.write("metrics.csv", sft::metrics_csv(&out.metrics).as_bytes())?;
        w.note("rejected_records", ds.rejected);
        if let Some(msg) = &out.diverged {
            w.note("diverged", msg);
        }
        w.finish()?;
        if let Some(msg) = out.diverged {
            bail!("{id}: SFT diverged ({msg}); the last good checkpoint was kept");
        }
    }
    Ok(())
}

/// Re-reads a pair file and checks every pair against its source example.
pub fn validate_pair_file(path: &Path, task: &Task, pools: &[&[Example]]) -> Result<Vec<ComparisonPair>> {
    let pairs: Vec<ComparisonPair> = rllr::jsonl::read(path)?;
    let index: std::collections::HashMap<u64, &Example> = pools.iter().flat_map(|p| p.iter()).map(|e| (e.id, e)).collect();
    for p in &pairs {
        let ex = index.get(&p.example_id).with_context(|| format!("{}: pair for unknown example {}", path.display(), p.example_id))?;
        validate_pair(task, ex, p).with_context(|| format!("validating {}", path.display()))?;
    }
    Ok(pairs)
}

pub fn make_pairs(run: &RunDir, cfg: &RunConfig, force: bool) -> Result<()> {
    for &id in &cfg.run.tasks {
        let task = Task::new(id);
        let mut w = StageWriter::begin(run, &pairs_dir(id), "make-pairs", cfg.to_text(), force)?;
        let unsup = read_pool(&mut w, &task, "unsup")?;
        let policy = load_ckpt(&mut w, &policy_path("sft", id), &task)?;
        let prompts = &unsup[..cfg.pairs.prompts.min(unsup.len())];
        let hyper = RankedHyper { k: cfg.pairs.k, temperature: cfg.pairs.temperature, max_new: cfg.pairs.max_new };
        let judge = Judge::new(cfg.judge);
        let r = build_ranked_pairs(&policy, &task, &judge, prompts, &hyper, cfg.run.seed)?;
        w.write("ranked.jsonl", &jsonl_bytes(&r.pairs))?;
        w.write("ranked_stats.csv", stats_csv(&pair_stats(&r.pairs)).as_bytes())?;
        w.note("prompts", prompts.len());
        w.note("unclassified", r.unclassified);
        w.note("questions_without_pairs", r.empty_questions);
        validate_pair_file(&run.path(&w.rel("ranked.jsonl")), &task, &[prompts])?;
        w.finish()?;
    }
    Ok(())
}

pub fn gen_label_pairs(run: &RunDir, cfg: &RunConfig, force: bool) -> Result<()> {
    for &id in &cfg.run.tasks {
        let task = Task::new(id);
        let mut w = StageWriter::begin(run, &pairs_dir(id), "gen-label-pairs", cfg.to_text(), force)?;
        let train = read_pool(&mut w, &task, "train")?;
        let test = read_pool(&mut w, &task, "test")?;
        let (pairs, short_train) = build_label_pairs(&task, &train, cfg.pairs.n_pairs, cfg.run.seed)?;
        let (holdout, short_test) = build_label_pairs(&task, &test, cfg.pairs.n_pairs, cfg.run.seed)?;
        w.write("label.jsonl", &jsonl_bytes(&pairs))?;
        w.write("label_holdout.jsonl", &jsonl_bytes(&holdout))?;
        if short_train + short_test > 0 {
            w.note("examples_with_fewer_wrong_labels", short_train + short_test);
        }
        validate_pair_file(&run.path(&w.rel("label.jsonl")), &task, &[&train])?;
        validate_pair_file(&run.path(&w.rel("label_holdout.jsonl")), &task, &[&test])?;
        w.finish()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmChoice {
    Label,
    Rationale,
    Both,
}

pub fn rm_file(role: Role) -> &'static str {
    match role {
        Role::RewardRationale => "reward_rationale",
        _ => "reward_label",
    }
}

pub fn train_rm(run: &RunDir, cfg: &RunConfig, choice: RmChoice, force: bool) -> Result<()> {
    let roles: &[Role] = match choice {
        RmChoice::Label => &[Role::RewardLabel],
        RmChoice::Rationale => &[Role::RewardRationale],
        RmChoice::Both => &[Role::RewardLabel, Role::RewardRationale],
    };
    for &id in &cfg.run.tasks {
        let task = Task::new(id);
        for &role in roles {
            let name = rm_file(role);
            let mut w = StageWriter::begin(run, &rm_dir(id), &format!("train-rm-{}", &name[7..]), cfg.to_text(), force)?;
            let sft = load_ckpt(&mut w, &policy_path("sft", id), &task)?;
            let holdout: Vec<ComparisonPair> = rllr::jsonl::read(&w.input(&format!("{}/label_holdout.jsonl", pairs_dir(id)))?)?;
            let (pairs, epochs) = if role == Role::RewardLabel {
                let p: Vec<ComparisonPair> = rllr::jsonl::read(&w.input(&format!("{}/label.jsonl", pairs_dir(id)))?)?;
                (p, cfg.reward.label_epochs)
            } else {
                let p: Vec<ComparisonPair> = rllr::jsonl::read(&w.input(&format!("{}/ranked.jsonl", pairs_dir(id)))?)?;
                let keep_all = cfg.reward.rationale_kinds == "all";
                (p.into_iter().filter(|p| keep_all || p.kind == PairKind::RationaleSensitive).collect(), cfg.reward.rationale_epochs)
            };
            if pairs.is_empty() {
                return refuse(format!("{id}: no training pairs for {}", role.name()));
            }
            check_disjoint(&pairs, &holdout)?;
            let hyper = RmHyper { lr: cfg.reward.lr, batch_size: cfg.reward.batch_size, epochs, seed: cfg.run.seed };
            let out = reward::train_rm(&sft, role, &pairs, &hyper)?;
            let ev = rm_eval(&out.model, &holdout)?;
            w.write(&format!("{name}.ckpt"), &ckpt_bytes(&out.model))?;
            w.write(&format!("{name}.metrics.csv"), sft::metrics_csv(&out.metrics).as_bytes())?;
            w.write(&format!("{name}.eval.csv"), reward::eval_csv(&[(id.to_string(), ev)]).as_bytes())?;
            w.note("training_pairs", pairs.len());
            if let Some(msg) = &out.diverged {
                w.note("diverged", msg);
            }
            w.finish()?;
            if let Some(msg) = out.diverged {
                bail!("{id}: {} training diverged ({msg}); the last good checkpoint was kept", role.name());
            }
        }
    }
    Ok(())
}

pub fn train_ppo(run: &RunDir, cfg: &RunConfig, mode: Mode, force: bool) -> Result<()> {
    for &id in &cfg.run.tasks {
        let task = Task::new(id);
        let dir = ppo_dir(mode, id);
        // dependency check before anything is written
        for (needed, role) in [(mode.needs_label_rm(), Role::RewardLabel), (mode.needs_rationale_rm(), Role::RewardRationale)] {
            let rel = format!("{}/{}.ckpt", rm_dir(id), rm_file(role));
            if needed && !run.exists(&rel) {
                return refuse(format!("mode {mode} needs a {} checkpoint at {rel}; run train-rm first", role.name()));
            }
        }
        let mut w = StageWriter::begin(run, &dir, "train-ppo", cfg.to_text(), force)?;
        let sft = load_ckpt(&mut w, &policy_path("sft", id), &task)?;
        let r1 = if mode.needs_label_rm() { Some(load_ckpt(&mut w, &format!("{}/reward_label.ckpt", rm_dir(id)), &task)?) } else { None };
        let r2 = if mode.needs_rationale_rm() { Some(load_ckpt(&mut w, &format!("{}/reward_rationale.ckpt", rm_dir(id)), &task)?) } else { None };
        let unsup = read_pool(&mut w, &task, "unsup")?;
        let test = if cfg.ppo.eval_every > 0 { read_pool(&mut w, &task, "test")? } else { Vec::new() };
        let pc = ppo::PpoConfig { mode, seed: cfg.run.seed, ..cfg.ppo };
        let out = ppo::train_ppo(&sft, &RewardModels { label: r1.as_ref(), rationale: r2.as_ref() }, &Prompt::from_examples(&task, &unsup), &pc, &task, &test)?;
        w.write("policy.ckpt", &ckpt_bytes(&out.policy))?;
        w.write("value.ckpt", &ckpt_bytes(&out.value))?;
        w.write("metrics.csv", ppo::metrics_csv(&out.metrics).as_bytes())?;
        for (iter, snap) in &out.snapshots {
            w.write(&format!("snapshot-{iter:05}.ckpt"), &ckpt_bytes(snap))?;
        }
        w.note("lambda", if out.lambda.is_finite() { format!("{}", out.lambda) } else { "unused".into() });
        if let Some(msg) = &out.diverged {
            w.note("diverged", msg);
        }
        w.finish()?;
        if let Some(msg) = out.diverged {
            bail!("{id}: PPO stopped early ({msg}); the last good checkpoints were kept");
        }
    }
    Ok(())
}

/// Methods whose policy checkpoint exists for `task`, in table order.
pub fn available_methods(run: &RunDir, task: TaskId) -> Vec<&'static str> {
    METHODS.into_iter().filter(|m| run.exists(&policy_path(m, task))).collect()
}

pub fn evaluate(run: &RunDir, cfg: &RunConfig) -> Result<()> {
    for &id in &cfg.run.tasks {
        let task = Task::new(id);
        let mut w = StageWriter::begin(run, &eval_dir(id), "evaluate", cfg.to_text(), true)?;
        let test = read_pool(&mut w, &task, "test")?;
        let methods = available_methods(run, id);
        if !methods.contains(&"sft") {
            return refuse(format!("{id}: no SFT policy to evaluate; run train-sft first"));
        }
        let judge = Judge::new(cfg.judge);
        let seeds = cfg.run.seed.to_string();
        let mut metrics = String::from("task,method,metric,value,seeds\n");
        let mut answers = Vec::new();
        for &m in &methods {
            let policy = load_ckpt(&mut w, &policy_path(m, id), &task)?;
            let pred = greedy_answers(&policy, &task, &test, cfg.eval.max_new)?;
            let mut row = |metric: &str, value: String| metrics.push_str(&format!("{id},{m},{metric},{value},{seeds}\n"));
            row("accuracy", format!("{:.6}", accuracy_of(&pred.labels, &test)));
            row("judge_score", format!("{:.6}", mean_judge_score(&judge, &task, &pred.answers, &test)));
            row("unparsed", pred.labels.iter().filter(|l| l.is_none()).count().to_string());
            if task.spec.is_ordinal() {
                let p = rating_pearson(&task, &pred.labels, &test)?;
                row("pearson", p.value.map(|v| format!("{v:.6}")).unwrap_or_else(|| "NA".into()));
            }
            answers.push((m, pred.answers));
        }
        let mut wr = String::from("task,method_a,method_b,win,lose,tie,n\n");
        for (i, (a, aa)) in answers.iter().enumerate() {
            for (b, bb) in &answers[i + 1..] {
                let c = win_counts(&judge, &task, aa, bb, &test);
                let (win, lose, tie) = c.fractions();
                wr.push_str(&format!("{id},{a},{b},{win:.6},{lose:.6},{tie:.6},{}\n", c.n()));
            }
        }
        w.write("metrics.csv", metrics.as_bytes())?;
        w.write("winrate.csv", wr.as_bytes())?;
        w.finish()?;
    }
    Ok(())
}
