use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{HeadSet, Layout, ModelConfig};
use super::linalg::{dot, gelu, gelu_grad, gemm, layer_norm, softmax, vec_mat, vec_mat_acc, View};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::synthlang::TokenId;

/// What a checkpoint is used for in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Policy,
    Reference,
    RewardLabel,
    RewardRationale,
    Value,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Policy, Role::Reference, Role::RewardLabel, Role::RewardRationale, Role::Value];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        Self::ALL.get(t as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Policy => "policy",
            Role::Reference => "reference",
            Role::RewardLabel => "reward_label",
            Role::RewardRationale => "reward_rationale",
            Role::Value => "value",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| Error::domain(format!("unknown role {s:?}")))
    }
}

/// A versioned parameter snapshot: config, role, vocabulary fingerprint and
/// the flat parameter vector in canonical [`Layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub role: Role,
    pub vocab_fingerprint: u64,
    pub params: Vec<f64>,
    layout: Layout,
}

/// Per-position outputs of the heads the model carries.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub len: usize,
    pub vocab_size: usize,
    /// `len × vocab_size` next-token logits, row-major.
    pub logits: Option<Vec<f64>>,
    pub values: Option<Vec<f64>>,
    /// Read at the last position.
    pub reward: Option<f64>,
}

impl ForwardOutput {
    pub fn logits_at(&self, t: usize) -> &[f64] {
        let l = self.logits.as_ref().expect("model has an lm head");
        &l[t * self.vocab_size..(t + 1) * self.vocab_size]
    }

    /// `ln p(next = token)` from the logits at position `t`.
    pub fn log_prob(&self, t: usize, token: TokenId) -> f64 {
        let row = self.logits_at(t);
        row[token as usize] - super::linalg::log_sum_exp(row)
    }
}

struct LnTrace {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct BlockTrace {
    ln1: LnTrace,
    y1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads × T × T` attention weights.
    probs: Vec<f64>,
    attn: Vec<f64>,
    ln2: LnTrace,
    y2: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

/// Activations kept by [`ModelCheckpoint::forward_traced`] for backpropagation.
pub struct Trace {
    tokens: Vec<TokenId>,
    blocks: Vec<BlockTrace>,
    lnf: LnTrace,
    z: Vec<f64>,
}

/// Upstream gradients of a loss with respect to the forward outputs.
#[derive(Default)]
pub struct OutputGrads<'a> {
    pub logits: Option<&'a [f64]>,
    pub values: Option<&'a [f64]>,
    pub reward: f64,
}

fn linear(x: &[f64], rows: usize, din: usize, dout: usize, p: &[f64], w: usize, b: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        y.extend_from_slice(&p[b..b + dout]);
    }
    gemm(rows, din, dout, x, View::rows(din), p, View::rows(dout).at(w), 1.0, &mut y, View::rows(dout));
    y
}

fn linear_nobias(x: &[f64], rows: usize, din: usize, dout: usize, p: &[f64], w: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * dout];
    gemm(rows, din, dout, x, View::rows(din), p, View::rows(dout).at(w), 0.0, &mut y, View::rows(dout));
    y
}

#[allow(clippy::too_many_arguments)]
fn linear_back_nobias(x: &[f64], dy: &[f64], rows: usize, din: usize, dout: usize, p: &[f64], w: usize, g: &mut [f64]) -> Vec<f64> {
    gemm(din, rows, dout, x, View::transposed(din), dy, View::rows(dout), 1.0, g, View::rows(dout).at(w));
    let mut dx = vec![0.0; rows * din];
    gemm(rows, dout, din, dy, View::rows(dout), p, View::transposed(dout).at(w), 0.0, &mut dx, View::rows(din));
    dx
}

/// Accumulates `dW += xᵀ·dy`, `db += Σ dy` and returns `dx = dy·Wᵀ`.
#[allow(clippy::too_many_arguments)]
fn linear_back(
    x: &[f64],
    dy: &[f64],
    rows: usize,
    din: usize,
    dout: usize,
    p: &[f64],
    w: usize,
    b: usize,
    g: &mut [f64],
) -> Vec<f64> {
    gemm(din, rows, dout, x, View::transposed(din), dy, View::rows(dout), 1.0, g, View::rows(dout).at(w));
    for row in dy.chunks_exact(dout) {
        for (gb, &d) in g[b..b + dout].iter_mut().zip(row) {
            *gb += d;
        }
    }
    let mut dx = vec![0.0; rows * din];
    gemm(rows, dout, din, dy, View::rows(dout), p, View::transposed(dout).at(w), 0.0, &mut dx, View::rows(din));
    dx
}

fn ln_forward(x: &[f64], d: usize, p: &[f64], g: usize, b: usize) -> (Vec<f64>, LnTrace) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    layer_norm(x, d, &p[g..g + d], &p[b..b + d], &mut y, &mut xhat, &mut rstd);
    (y, LnTrace { xhat, rstd })
}

fn ln_back(tr: &LnTrace, dy: &[f64], d: usize, p: &[f64], go: usize, bo: usize, grads: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for (r, dyr) in dy.chunks_exact(d).enumerate() {
        let xh = &tr.xhat[r * d..(r + 1) * d];
        for j in 0..d {
            grads[go + j] += dyr[j] * xh[j];
            grads[bo + j] += dyr[j];
            dxhat[j] = dyr[j] * p[go + j];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dot(&dxhat, xh) / d as f64;
        for j in 0..d {
            dx[r * d + j] = tr.rstd[r] * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

impl ModelCheckpoint {
    /// Fresh parameters: N(0, 0.02) weights with residual projections scaled
    /// down by `sqrt(2 · layers)`, unit norm gains, zero biases, zero value and
    /// reward heads.
    pub fn init(config: ModelConfig, role: Role, vocab_fingerprint: u64, stream: &mut Stream) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let d = config.width;
        let std = 0.02;
        let resid_std = std / (2.0 * config.layers.max(1) as f64).sqrt();
        let mut fill = |params: &mut [f64], off: usize, n: usize, s: f64| {
            let dist = Normal::new(0.0, s).expect("positive std");
            for p in &mut params[off..off + n] {
                *p = dist.sample(stream);
            }
        };
        fill(&mut params, layout.tok_emb, config.vocab_size * d, std);
        fill(&mut params, layout.pos_emb, config.context_length * d, std);
        for bl in &layout.blocks {
            for w in [bl.wq, bl.wk, bl.wv] {
                fill(&mut params, w, d * d, std);
            }
            fill(&mut params, bl.wo, d * d, resid_std);
            fill(&mut params, bl.w1, 4 * d * d, std);
            fill(&mut params, bl.w2, 4 * d * d, resid_std);
            params[bl.ln1_g..bl.ln1_g + d].fill(1.0);
            params[bl.ln2_g..bl.ln2_g + d].fill(1.0);
        }
        params[layout.lnf_g..layout.lnf_g + d].fill(1.0);
        if let Some((w, _)) = layout.lm {
            fill(&mut params, w, d * config.vocab_size, std);
        }
        Ok(Self { config, role, vocab_fingerprint, params, layout })
    }

    pub fn from_parts(config: ModelConfig, role: Role, vocab_fingerprint: u64, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!("expected {} parameters, found {}", layout.total, params.len())));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Checkpoint(format!("parameter {i} is not finite")));
        }
        Ok(Self { config, role, vocab_fingerprint, params, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Same trunk with a different head set. Heads present in both keep their
    /// parameters; new value and reward heads start at zero, a new lm head at
    /// the usual random init.
    pub fn with_heads(&self, head_set: HeadSet, role: Role, stream: &mut Stream) -> Self {
        let config = self.config.with_heads(head_set);
        let mut out = Self::init(config, role, self.vocab_fingerprint, stream).expect("config already validated");
        let trunk = self.layout.trunk_len;
        out.params[..trunk].copy_from_slice(&self.params[..trunk]);
        let (d, v) = (self.config.width, self.config.vocab_size);
        let heads = [
            (self.layout.lm, out.layout.lm, d * v + v),
            (self.layout.value, out.layout.value, d + 1),
            (self.layout.reward, out.layout.reward, d + 1),
        ];
        // each head is its weight followed directly by its bias
        for (src, dst, n) in heads {
            if let (Some((s, _)), Some((t, _))) = (src, dst) {
                out.params[t..t + n].copy_from_slice(&self.params[s..s + n]);
            }
        }
        out
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::domain("empty token sequence"));
        }
        if tokens.len() > self.config.context_length {
            return Err(Error::domain(format!(
                "sequence of {} tokens exceeds context length {}",
                tokens.len(),
                self.config.context_length
            )));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::domain(format!("token id {t} outside vocab of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    pub fn forward(&self, tokens: &[TokenId]) -> Result<ForwardOutput> {
        self.forward_traced(tokens).map(|(o, _)| o)
    }

    pub fn forward_traced(&self, tokens: &[TokenId]) -> Result<(ForwardOutput, Trace)> {
        self.check_tokens(tokens)?;
        let p = &self.params;
        let cfg = &self.config;
        let (t_len, d, nh) = (tokens.len(), cfg.width, cfg.heads);
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let lay = &self.layout;

        let mut x = vec![0.0; t_len * d];
        for (t, &tok) in tokens.iter().enumerate() {
            let te = lay.tok_emb + tok as usize * d;
            let pe = lay.pos_emb + t * d;
            for j in 0..d {
                x[t * d + j] = p[te + j] + p[pe + j];
            }
        }

        let mut blocks = Vec::with_capacity(cfg.layers);
        for bl in &lay.blocks {
            let (y1, ln1) = ln_forward(&x, d, p, bl.ln1_g, bl.ln1_b);
            let q = linear(&y1, t_len, d, d, p, bl.wq, bl.bq);
            let k = linear_nobias(&y1, t_len, d, d, p, bl.wk);
            let v = linear(&y1, t_len, d, d, p, bl.wv, bl.bv);
            let mut probs = vec![0.0; nh * t_len * t_len];
            let mut attn = vec![0.0; t_len * d];
            for h in 0..nh {
                let s = &mut probs[h * t_len * t_len..(h + 1) * t_len * t_len];
                let ho = h * dh;
                gemm(t_len, dh, t_len, &q, View::rows(d).at(ho), &k, View::transposed(d).at(ho), 0.0, s, View::rows(t_len));
                for i in 0..t_len {
                    let row = &mut s[i * t_len..(i + 1) * t_len];
                    for v in row[..=i].iter_mut() {
                        *v *= scale;
                    }
                    softmax(&mut row[..=i]);
                    row[i + 1..].fill(0.0);
                }
                gemm(t_len, t_len, dh, s, View::rows(t_len), &v, View::rows(d).at(ho), 0.0, &mut attn, View::rows(d).at(ho));
            }
            let o = linear(&attn, t_len, d, d, p, bl.wo, bl.bo);
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += oi;
            }
            let (y2, ln2) = ln_forward(&x, d, p, bl.ln2_g, bl.ln2_b);
            let pre = linear(&y2, t_len, d, 4 * d, p, bl.w1, bl.b1);
            let act: Vec<f64> = pre.iter().map(|&h| gelu(h)).collect();
            let m = linear(&act, t_len, 4 * d, d, p, bl.w2, bl.b2);
            for (xi, mi) in x.iter_mut().zip(&m) {
                *xi += mi;
            }
            blocks.push(BlockTrace { ln1, y1, q, k, v, probs, attn, ln2, y2, pre, act });
        }
        let (z, lnf) = ln_forward(&x, d, p, lay.lnf_g, lay.lnf_b);

        let vsz = cfg.vocab_size;
        let logits = lay.lm.map(|(w, b)| linear(&z, t_len, d, vsz, p, w, b));
        let values = lay.value.map(|(w, b)| z.chunks_exact(d).map(|zr| dot(zr, &p[w..w + d]) + p[b]).collect());
        let reward = lay.reward.map(|(w, b)| dot(&z[(t_len - 1) * d..], &p[w..w + d]) + p[b]);

        let out = ForwardOutput { len: t_len, vocab_size: vsz, logits, values, reward };
        Ok((out, Trace { tokens: tokens.to_vec(), blocks, lnf, z }))
    }

    /// Accumulates parameter gradients of a loss into `grads`, given the
    /// loss gradients with respect to this trace's outputs.
    pub fn backward(&self, trace: &Trace, upstream: &OutputGrads<'_>, grads: &mut [f64]) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let p = &self.params;
        let cfg = &self.config;
        let lay = &self.layout;
        let t_len = trace.tokens.len();
        let (d, nh) = (cfg.width, cfg.heads);
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let z = &trace.z;

        let mut dz = vec![0.0; t_len * d];
        if let (Some(dl), Some((w, b))) = (upstream.logits, lay.lm) {
            let vsz = cfg.vocab_size;
            let dx = linear_back(z, dl, t_len, d, vsz, p, w, b, grads);
            for (a, c) in dz.iter_mut().zip(&dx) {
                *a += c;
            }
        }
        if let (Some(dv), Some((w, b))) = (upstream.values, lay.value) {
            for (t, &g) in dv.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for j in 0..d {
                    grads[w + j] += g * z[t * d + j];
                    dz[t * d + j] += g * p[w + j];
                }
                grads[b] += g;
            }
        }
        if let (g, Some((w, b))) = (upstream.reward, lay.reward) {
            if g != 0.0 {
                let t = t_len - 1;
                for j in 0..d {
                    grads[w + j] += g * z[t * d + j];
                    dz[t * d + j] += g * p[w + j];
                }
                grads[b] += g;
            }
        }

        let mut dx = ln_back(&trace.lnf, &dz, d, p, lay.lnf_g, lay.lnf_b, grads);
        for (bl, tr) in lay.blocks.iter().zip(&trace.blocks).rev() {
            // MLP branch
            let dact = linear_back(&tr.act, &dx, t_len, 4 * d, d, p, bl.w2, bl.b2, grads);
            let dpre: Vec<f64> = dact.iter().zip(&tr.pre).map(|(g, &h)| g * gelu_grad(h)).collect();
            let dy2 = linear_back(&tr.y2, &dpre, t_len, d, 4 * d, p, bl.w1, bl.b1, grads);
            let dres = ln_back(&tr.ln2, &dy2, d, p, bl.ln2_g, bl.ln2_b, grads);
            for (a, c) in dx.iter_mut().zip(&dres) {
                *a += c;
            }
            // attention branch
            let dattn = linear_back(&tr.attn, &dx, t_len, d, d, p, bl.wo, bl.bo, grads);
            let mut dq = vec![0.0; t_len * d];
            let mut dk = vec![0.0; t_len * d];
            let mut dv = vec![0.0; t_len * d];
            let mut ds = vec![0.0; t_len * t_len];
            for h in 0..nh {
                let ho = h * dh;
                let pr = &tr.probs[h * t_len * t_len..(h + 1) * t_len * t_len];
                gemm(t_len, dh, t_len, &dattn, View::rows(d).at(ho), &tr.v, View::transposed(d).at(ho), 0.0, &mut ds, View::rows(t_len));
                gemm(t_len, t_len, dh, pr, View::transposed(t_len), &dattn, View::rows(d).at(ho), 1.0, &mut dv, View::rows(d).at(ho));
                for i in 0..t_len {
                    let prow = &pr[i * t_len..=i * t_len + i];
                    let drow = &mut ds[i * t_len..(i + 1) * t_len];
                    let c = dot(&drow[..=i], prow);
                    for j in 0..=i {
                        drow[j] = prow[j] * (drow[j] - c) * scale;
                    }
                    drow[i + 1..].fill(0.0);
                }
                gemm(t_len, t_len, dh, &ds, View::rows(t_len), &tr.k, View::rows(d).at(ho), 1.0, &mut dq, View::rows(d).at(ho));
                gemm(t_len, t_len, dh, &ds, View::transposed(t_len), &tr.q, View::rows(d).at(ho), 1.0, &mut dk, View::rows(d).at(ho));
            }
            let mut dy1 = linear_back(&tr.y1, &dq, t_len, d, d, p, bl.wq, bl.bq, grads);
            let dk_in = linear_back_nobias(&tr.y1, &dk, t_len, d, d, p, bl.wk, grads);
            let dv_in = linear_back(&tr.y1, &dv, t_len, d, d, p, bl.wv, bl.bv, grads);
            for ((a, c), e) in dy1.iter_mut().zip(&dk_in).zip(&dv_in) {
                *a += c + e;
            }
            let dres = ln_back(&tr.ln1, &dy1, d, p, bl.ln1_g, bl.ln1_b, grads);
            for (a, c) in dx.iter_mut().zip(&dres) {
                *a += c;
            }
        }
        for (t, &tok) in trace.tokens.iter().enumerate() {
            let te = lay.tok_emb + tok as usize * d;
            let pe = lay.pos_emb + t * d;
            for j in 0..d {
                grads[te + j] += dx[t * d + j];
                grads[pe + j] += dx[t * d + j];
            }
        }
    }

    /// Incremental decoder for sampling; see [`Decoder`].
    pub fn decoder(&self) -> Decoder<'_> {
        Decoder { model: self, keys: vec![Vec::new(); self.config.layers], values: vec![Vec::new(); self.config.layers], pos: 0 }
    }
}

/// Feeds tokens one at a time, caching per-layer keys and values so each
/// step costs one position instead of a full forward pass.
pub struct Decoder<'a> {
    model: &'a ModelCheckpoint,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    pos: usize,
}

impl Decoder<'_> {
    pub fn len(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == 0
    }

    /// Appends `token` and returns the next-token logits at its position.
    pub fn step(&mut self, token: TokenId) -> Result<Vec<f64>> {
        let m = self.model;
        let cfg = &m.config;
        if self.pos >= cfg.context_length {
            return Err(Error::domain(format!("decoder exceeded context length {}", cfg.context_length)));
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::domain(format!("token id {token} outside vocab of {}", cfg.vocab_size)));
        }
        let Some((lm_w, lm_b)) = m.layout.lm else {
            return Err(Error::domain("decoding needs an lm head"));
        };
        let p = &m.params;
        let lay = &m.layout;
        let (d, nh) = (cfg.width, cfg.heads);
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let t = self.pos;

        let te = lay.tok_emb + token as usize * d;
        let pe = lay.pos_emb + t * d;
        let mut x: Vec<f64> = (0..d).map(|j| p[te + j] + p[pe + j]).collect();
        let mut y = vec![0.0; d];
        let mut xhat = vec![0.0; d];
        let mut rstd = [0.0];
        let mut q = vec![0.0; d];
        let mut kv = vec![0.0; d];
        let mut attn = vec![0.0; d];
        let mut o = vec![0.0; d];
        let mut hid = vec![0.0; 4 * d];
        for (l, bl) in lay.blocks.iter().enumerate() {
            layer_norm(&x, d, &p[bl.ln1_g..bl.ln1_g + d], &p[bl.ln1_b..bl.ln1_b + d], &mut y, &mut xhat, &mut rstd);
            vec_mat(&y, &p[bl.wq..bl.wq + d * d], &p[bl.bq..bl.bq + d], &mut q);
            kv.fill(0.0);
            vec_mat_acc(&y, &p[bl.wk..bl.wk + d * d], &mut kv);
            self.keys[l].extend_from_slice(&kv);
            vec_mat(&y, &p[bl.wv..bl.wv + d * d], &p[bl.bv..bl.bv + d], &mut kv);
            self.values[l].extend_from_slice(&kv);
            let (ks, vs) = (&self.keys[l], &self.values[l]);
            let mut w = vec![0.0; t + 1];
            for h in 0..nh {
                let hs = h * dh..(h + 1) * dh;
                for (j, wj) in w.iter_mut().enumerate() {
                    *wj = dot(&q[hs.clone()], &ks[j * d + h * dh..j * d + (h + 1) * dh]) * scale;
                }
                softmax(&mut w);
                let out = &mut attn[hs];
                out.fill(0.0);
                for (j, &wj) in w.iter().enumerate() {
                    for (a, &vv) in out.iter_mut().zip(&vs[j * d + h * dh..j * d + (h + 1) * dh]) {
                        *a += wj * vv;
                    }
                }
            }
            vec_mat(&attn, &p[bl.wo..bl.wo + d * d], &p[bl.bo..bl.bo + d], &mut o);
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += oi;
            }
            layer_norm(&x, d, &p[bl.ln2_g..bl.ln2_g + d], &p[bl.ln2_b..bl.ln2_b + d], &mut y, &mut xhat, &mut rstd);
            vec_mat(&y, &p[bl.w1..bl.w1 + 4 * d * d], &p[bl.b1..bl.b1 + 4 * d], &mut hid);
            for h in hid.iter_mut() {
                *h = gelu(*h);
            }
            vec_mat(&hid, &p[bl.w2..bl.w2 + 4 * d * d], &p[bl.b2..bl.b2 + d], &mut o);
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += oi;
            }
        }
        layer_norm(&x, d, &p[lay.lnf_g..lay.lnf_g + d], &p[lay.lnf_b..lay.lnf_b + d], &mut y, &mut xhat, &mut rstd);
        let vsz = cfg.vocab_size;
        let mut logits = vec![0.0; vsz];
        vec_mat(&y, &p[lm_w..lm_w + d * vsz], &p[lm_b..lm_b + vsz], &mut logits);
        self.pos += 1;
        Ok(logits)
    }
}
