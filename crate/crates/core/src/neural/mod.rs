//! A small decoder-only transformer in f64 with hand-written backpropagation.
//!
//! Pre-norm blocks (layer norm, causal multi-head attention, GELU MLP), learned
//! position embeddings and up to three heads over the final layer norm: next
//! token logits, per-position values and a scalar reward read at the last
//! position. Parameters live in one flat vector in a fixed canonical order,
//! which keeps the optimizer, checkpoint format and gradient checker trivial.

mod adam;
pub mod checkpoint;
mod config;
mod gradcheck;
mod linalg;
mod loss;
mod model;
mod sample;

pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use config::{BlockLayout, HeadSet, Layout, ModelConfig};
pub use gradcheck::{checked_indices, grad_check, numeric_grad, relative_error};
pub use linalg::log_sum_exp;
pub use loss::{
    bt_loss_from_rewards, bt_pair_loss, loss_and_grads, sequence_log_probs, Batch, LossKind, LossOutput, PairItem,
    PolicyItem, SftItem, ValueItem,
};
pub use model::{Decoder, ForwardOutput, ModelCheckpoint, OutputGrads, Role, Trace};
pub use sample::{argmax, draw, greedy, sample, Sample};
