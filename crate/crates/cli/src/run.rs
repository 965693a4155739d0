//! Run directory layout, provenance manifests and the writer lock.
//!
//! `runs/<name>/{data, sft, pairs, rm, ppo-<mode>, eval}/<task>/`: each command
//! writes into one stage directory and leaves `<command>.manifest.json` there
//! with the sha256 of every file it read and wrote.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A precondition failure: missing or tampered inputs, existing outputs.
#[derive(Debug)]
pub struct Refusal(pub String);

impl fmt::Display for Refusal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Refusal {}

pub fn refuse<T>(msg: impl Into<String>) -> Result<T> {
    Err(Refusal(msg.into()).into())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).with_context(|| format!("reading {}", path.display()))?))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    /// Resolved configuration the command ran with.
    pub config: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub notes: BTreeMap<String, String>,
}

pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn lock(&self) -> Result<Lock> {
        fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))?;
        let path = self.root.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Lock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                refuse(format!("{} is locked by another writer (remove {} if it is stale)", self.root.display(), path.display()))
            }
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }

    fn manifests_in(&self, dir: &Path) -> Result<Vec<Manifest>> {
        let mut out = Vec::new();
        let Ok(entries) = fs::read_dir(dir) else { return Ok(out) };
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            if p.to_string_lossy().ends_with(".manifest.json") {
                let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                out.push(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?);
            }
        }
        Ok(out)
    }

    /// Hash of `rel` after checking it against the manifest that produced it.
    pub fn verify(&self, rel: &str) -> Result<String> {
        let path = self.path(rel);
        if !path.exists() {
            return refuse(format!("missing input {rel} in {}", self.root.display()));
        }
        let dir = path.parent().expect("inputs live in stage directories");
        let expected = self.manifests_in(dir)?.into_iter().find_map(|m| m.outputs.get(rel).cloned());
        let Some(expected) = expected else {
            return refuse(format!("input {rel} has no provenance record in {}", dir.display()));
        };
        let found = sha256_file(&path)?;
        if found != expected {
            return refuse(format!("input {rel} was modified: expected sha256 {expected}, found {found}"));
        }
        Ok(found)
    }

    /// Verifies `rel` and, transitively, every input recorded upstream of it.
    pub fn verify_chain(&self, rel: &str) -> Result<String> {
        let mut seen = std::collections::BTreeSet::new();
        let mut todo = vec![rel.to_string()];
        while let Some(r) = todo.pop() {
            if !seen.insert(r.clone()) {
                continue;
            }
            self.verify(&r)?;
            let dir = self.path(&r);
            let dir = dir.parent().expect("inputs live in stage directories");
            for m in self.manifests_in(dir)?.into_iter().filter(|m| m.outputs.contains_key(&r)) {
                for (input, expected) in &m.inputs {
                    let found = self.verify(input)?;
                    if &found != expected {
                        return refuse(format!("{r} was built from an older {input}: expected sha256 {expected}, found {found}"));
                    }
                    todo.push(input.clone());
                }
            }
        }
        self.verify(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).exists()
    }
}

/// Held while a command writes; removed on drop.
#[derive(Debug)]
pub struct Lock {
    path: PathBuf,
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Collects one command's inputs and outputs and writes its manifest.
pub struct StageWriter<'a> {
    run: &'a RunDir,
    dir: String,
    manifest: Manifest,
}

impl<'a> StageWriter<'a> {
    /// Refuses when the command already ran here, unless `force`.
    pub fn begin(run: &'a RunDir, dir: &str, command: &str, config: String, force: bool) -> Result<Self> {
        let manifest_path = run.path(&format!("{dir}/{command}.manifest.json"));
        if manifest_path.exists() && !force {
            return refuse(format!("{} already exists; pass --force to overwrite", manifest_path.display()));
        }
        fs::create_dir_all(run.path(dir)).with_context(|| format!("creating {dir}"))?;
        Ok(Self { run, dir: dir.to_string(), manifest: Manifest { command: command.into(), config, ..Default::default() } })
    }

    pub fn rel(&self, name: &str) -> String {
        format!("{}/{name}", self.dir)
    }

    /// Verifies an input and records its hash.
    pub fn input(&mut self, rel: &str) -> Result<PathBuf> {
        let h = self.run.verify(rel)?;
        self.manifest.inputs.insert(rel.to_string(), h);
        Ok(self.run.path(rel))
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let rel = self.rel(name);
        let path = self.run.path(&rel);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.outputs.insert(rel, sha256_hex(bytes));
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.manifest.notes.insert(key.to_string(), value.to_string());
    }

    pub fn finish(self) -> Result<Manifest> {
        let path = self.run.path(&format!("{}/{}.manifest.json", self.dir, self.manifest.command));
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_chain() {
        let tmp = tempfile::tempdir().unwrap();
        let run = RunDir::new(tmp.path());
        let mut w = StageWriter::begin(&run, "data/polarity", "gen-data", String::new(), false).unwrap();
        w.write("train.jsonl", b"{}\n").unwrap();
        w.finish().unwrap();
        assert_eq!(run.verify("data/polarity/train.jsonl").unwrap(), sha256_hex(b"{}\n"));
        assert!(StageWriter::begin(&run, "data/polarity", "gen-data", String::new(), false).is_err());
        assert!(StageWriter::begin(&run, "data/polarity", "gen-data", String::new(), true).is_ok());

        fs::write(run.path("data/polarity/train.jsonl"), b"[]\n").unwrap();
        let err = run.verify("data/polarity/train.jsonl").unwrap_err();
        assert!(err.downcast_ref::<Refusal>().unwrap().0.contains("expected sha256"));
        assert!(run.verify("data/polarity/test.jsonl").unwrap_err().downcast_ref::<Refusal>().is_some());
    }

    #[test]
    fn lock_is_exclusive() {
        let tmp = tempfile::tempdir().unwrap();
        let run = RunDir::new(tmp.path().join("r"));
        let held = run.lock().unwrap();
        assert!(run.lock().is_err());
        drop(held);
        assert!(run.lock().is_ok());
    }
}
