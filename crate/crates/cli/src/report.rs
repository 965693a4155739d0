//! Consolidated tables across tasks and methods.

use std::collections::BTreeMap;
use std::fs;

use anyhow::{Context, Result};
use rllr::pairs::{pair_stats, stats_csv, ComparisonPair};
use rllr::synthlang::TaskId;

use crate::config::RunConfig;
use crate::run::{refuse, RunDir, StageWriter};
use crate::stages::{eval_dir, pairs_dir, METHODS};

/// Data rows of a CSV file this tool wrote, header checked.
fn rows(run: &RunDir, rel: &str, header: &str) -> Result<Vec<Vec<String>>> {
    run.verify_chain(rel)?;
    let text = fs::read_to_string(run.path(rel)).with_context(|| format!("reading {rel}"))?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return refuse(format!("{rel} does not start with the header {header:?}"));
    }
    Ok(lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

const METRICS_HEADER: &str = "task,method,metric,value,seeds";
const WINRATE_HEADER: &str = "task,method_a,method_b,win,lose,tie,n";

/// Task-by-method table of one metric, `NA` where it is missing.
fn table(title: &str, metric: &str, tasks: &[TaskId], values: &BTreeMap<(String, String, String), String>) -> String {
    let mut out = format!("{title}\n{:<10}", "task");
    for m in METHODS {
        out.push_str(&format!(" {m:>8}"));
    }
    out.push('\n');
    let mut sums = vec![(0.0, 0usize); METHODS.len()];
    let mut any = false;
    for t in tasks {
        let Some(_) = METHODS.iter().find(|m| values.contains_key(&(t.to_string(), m.to_string(), metric.to_string()))) else {
            continue;
        };
        any = true;
        out.push_str(&format!("{:<10}", t.to_string()));
        for (i, m) in METHODS.iter().enumerate() {
            let v = values.get(&(t.to_string(), m.to_string(), metric.to_string()));
            match v.and_then(|v| v.parse::<f64>().ok()) {
                Some(x) => {
                    out.push_str(&format!(" {x:>8.4}"));
                    sums[i].0 += x;
                    sums[i].1 += 1;
                }
                None => out.push_str(&format!(" {:>8}", "NA")),
            }
        }
        out.push('\n');
    }
    if !any {
        return String::new();
    }
    out.push_str(&format!("{:<10}", "mean"));
    for (s, n) in sums {
        if n > 0 {
            out.push_str(&format!(" {:>8.4}", s / n as f64));
        } else {
            out.push_str(&format!(" {:>8}", "NA"));
        }
    }
    out.push_str("\n\n");
    out
}

pub fn report(run: &RunDir, cfg: &RunConfig) -> Result<()> {
    let mut w = StageWriter::begin(run, "eval", "report", cfg.to_text(), true)?;
    let mut results = format!("{METRICS_HEADER}\n");
    let mut winrate = format!("{WINRATE_HEADER}\n");
    let mut values = BTreeMap::new();
    let mut all_pairs = Vec::new();
    let mut wins = String::new();
    for &t in &cfg.run.tasks {
        let rel = format!("{}/metrics.csv", eval_dir(t));
        if !run.exists(&rel) {
            return refuse(format!("missing {rel}; run evaluate first"));
        }
        for r in rows(run, &rel, METRICS_HEADER)? {
            results.push_str(&r.join(","));
            results.push('\n');
            if let [task, method, metric, value, _] = r.as_slice() {
                values.insert((task.clone(), method.clone(), metric.clone()), value.clone());
            }
        }
        w.input(&rel)?;
        let rel = format!("{}/winrate.csv", eval_dir(t));
        for r in rows(run, &rel, WINRATE_HEADER)? {
            winrate.push_str(&r.join(","));
            winrate.push('\n');
            if let [task, a, b, win, lose, tie, n] = r.as_slice() {
                wins.push_str(&format!("{task:<10} {a:>6} vs {b:<6} win {win} lose {lose} tie {tie} (n={n})\n"));
            }
        }
        w.input(&rel)?;
        let rel = format!("{}/ranked.jsonl", pairs_dir(t));
        if run.exists(&rel) {
            let path = w.input(&rel)?;
            let pairs: Vec<ComparisonPair> = rllr::jsonl::read(&path)?;
            all_pairs.extend(pairs);
        }
    }
    let mut summary = String::new();
    summary.push_str(&table("greedy label accuracy", "accuracy", &cfg.run.tasks, &values));
    summary.push_str(&table("pearson correlation", "pearson", &cfg.run.tasks, &values));
    summary.push_str(&table("mean judge score", "judge_score", &cfg.run.tasks, &values));
    if !wins.is_empty() {
        summary.push_str("judge win rates\n");
        summary.push_str(&wins);
    }
    w.write("results.csv", results.as_bytes())?;
    w.write("winrate.csv", winrate.as_bytes())?;
    w.write("pairs.csv", stats_csv(&pair_stats(&all_pairs)).as_bytes())?;
    w.write("summary.txt", summary.as_bytes())?;
    w.finish()?;
    Ok(())
}
