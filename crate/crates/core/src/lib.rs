//! Rationale-augmented fine-tuning with label-sensitive rewards.
//!
//! The pipeline has three stages:
//!
//! 1. [`sft`]: supervised fine-tuning on answers made of a rationale followed
//!    by the label.
//! 2. [`pairs`] and [`reward`]: comparison pairs (rationale-sensitive pairs
//!    ranked by a judge, label-sensitive pairs built from fabricated
//!    wrong-label rationales) and Bradley-Terry reward models trained on them.
//! 3. [`ppo`]: KL-penalized PPO against the label reward, the rationale
//!    reward, or a threshold-truncated mix of the two.
//!
//! Everything runs on the synthetic tasks of [`synthlang`], whose evidence is
//! fully observable so that rationales and labels can be checked exactly.

pub mod error;
pub mod eval;
pub mod jsonl;
pub mod neural;
pub mod pairs;
pub mod ppo;
pub mod reward;
pub mod rng;
pub mod sft;
pub mod synthlang;

pub use error::{Error, Result};
