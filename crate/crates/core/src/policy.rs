//! Tiny autoregressive policy with hand-derived reverse-mode gradients.
//!
//! Architecture: learned token + position embeddings feeding a small stack
//! of pre-norm causal self-attention blocks (multi-head attention, then a
//! SiLU MLP, both with residual connections and parameter-free RMSNorm),
//! and a final projection to vocabulary logits:
//!
//! ```text
//!     x   = tok_emb[t] + pos_emb[pos]
//!     x  += Wo * Attn(rmsnorm(x))          (causal, per head)
//!     x  += W2 * silu(W1 * rmsnorm(x) + b1) + b2
//!     ... repeat for each block ...
//!     logits = Wout * rmsnorm(x)
//! ```
//!
//! Everything is plain `f64` in one flat parameter vector with a recorded
//! shape table; gradients are computed by explicit backpropagation through
//! a recorded forward tape. Sampling, scoring, and training all step the
//! same per-position routine, so a log-probability recorded during
//! sampling is bit-identical to the one recomputed during the update.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binfmt::{BinError, ByteReader, ByteWriter};
use crate::rng::StreamRng;
use crate::vocab::{TokenId, TokenSeq};

const CKPT_MAGIC: &[u8; 8] = b"CIBPOLC1";
const CKPT_VERSION: u32 = 1;
const RMSNORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    BadConfig(String),
    #[error("context of {len} tokens exceeds the {window}-token window")]
    ContextOverflow { len: usize, window: usize },
    #[error("policy forward needs a non-empty context")]
    EmptyContext,
    #[error("token {token} out of range for vocab of size {vocab_size}")]
    TokenOutOfRange { token: TokenId, vocab_size: usize },
    #[error("temperature must be >= 0 and finite, got {0}")]
    BadTemperature(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint file: {0}")]
    File(#[from] BinError),
}

/// Model geometry. `embed_dim` must divide evenly into `n_heads`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub vocab_size: usize,
    pub context_len: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub mlp_hidden: usize,
    pub init_std: f64,
}

impl PolicyConfig {
    /// Desk-scale defaults: 256-token window, 32-dim embeddings, 2 heads,
    /// 2 blocks, 128 hidden units.
    pub fn for_vocab(vocab_size: usize) -> Self {
        PolicyConfig {
            vocab_size,
            context_len: 256,
            embed_dim: 32,
            n_heads: 2,
            n_blocks: 2,
            mlp_hidden: 128,
            init_std: 0.02,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: String| Err(PolicyError::BadConfig(m));
        if self.vocab_size < 2 {
            return bad(format!("vocab_size {} < 2", self.vocab_size));
        }
        if self.context_len == 0 || self.embed_dim == 0 || self.n_blocks == 0 || self.mlp_hidden == 0
        {
            return bad("all dimensions must be positive".into());
        }
        if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return bad(format!(
                "n_heads {} must divide embed_dim {}",
                self.n_heads, self.embed_dim
            ));
        }
        if !(self.init_std > 0.0) || !self.init_std.is_finite() {
            return bad(format!("init_std {} must be positive", self.init_std));
        }
        Ok(())
    }
}

/// One named parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Flat parameter layout derived from a config; the shape table is also
/// what checkpoints persist.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub segments: Vec<Segment>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &PolicyConfig) -> Layout {
        let d = cfg.embed_dim;
        let m = cfg.mlp_hidden;
        let mut segments = Vec::new();
        let mut total = 0;
        let push = |name: String, shape: Vec<usize>, total: &mut usize, segs: &mut Vec<Segment>| {
            let len = shape.iter().product();
            segs.push(Segment { name, shape, offset: *total, len });
            *total += len;
        };
        push("tok_emb".into(), vec![cfg.vocab_size, d], &mut total, &mut segments);
        push("pos_emb".into(), vec![cfg.context_len, d], &mut total, &mut segments);
        for b in 0..cfg.n_blocks {
            for w in ["wq", "wk", "wv", "wo"] {
                push(format!("blk{b}.{w}"), vec![d, d], &mut total, &mut segments);
            }
            push(format!("blk{b}.w1"), vec![m, d], &mut total, &mut segments);
            push(format!("blk{b}.b1"), vec![m], &mut total, &mut segments);
            push(format!("blk{b}.w2"), vec![d, m], &mut total, &mut segments);
            push(format!("blk{b}.b2"), vec![d], &mut total, &mut segments);
        }
        push("out_proj".into(), vec![cfg.vocab_size, d], &mut total, &mut segments);
        Layout { segments, total }
    }
}

/// Precomputed offsets into the flat vector (hot-path bookkeeping).
#[derive(Debug, Clone)]
struct Offsets {
    tok_emb: usize,
    pos_emb: usize,
    blocks: Vec<BlockOffsets>,
    out_proj: usize,
}

#[derive(Debug, Clone, Copy)]
struct BlockOffsets {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl Offsets {
    fn new(cfg: &PolicyConfig) -> Offsets {
        let d = cfg.embed_dim;
        let m = cfg.mlp_hidden;
        let mut cursor = 0usize;
        let mut take = |n: usize| {
            let at = cursor;
            cursor += n;
            at
        };
        let tok_emb = take(cfg.vocab_size * d);
        let pos_emb = take(cfg.context_len * d);
        let blocks = (0..cfg.n_blocks)
            .map(|_| BlockOffsets {
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                w1: take(m * d),
                b1: take(m),
                w2: take(d * m),
                b2: take(d),
            })
            .collect();
        let out_proj = take(cfg.vocab_size * d);
        Offsets { tok_emb, pos_emb, blocks, out_proj }
    }
}

/// Flat `f64` parameters plus their geometry.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    cfg: PolicyConfig,
    data: Vec<f64>,
    offs: Offsets,
}

impl PolicyParams {
    /// Gaussian-initialize embeddings, attention inputs, the first MLP
    /// layer, and the output projection; residual-output weights and biases
    /// start at zero so each block initially passes its input through.
    pub fn init(cfg: &PolicyConfig, rng: &mut StreamRng) -> Result<Self, PolicyError> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        let offs = Offsets::new(cfg);
        let mut data = vec![0.0; layout.total];
        for seg in &layout.segments {
            let gaussian = seg.name == "tok_emb"
                || seg.name == "pos_emb"
                || seg.name.ends_with(".wq")
                || seg.name.ends_with(".wk")
                || seg.name.ends_with(".wv")
                || seg.name.ends_with(".w1")
                || seg.name == "out_proj";
            if gaussian {
                for x in &mut data[seg.offset..seg.offset + seg.len] {
                    *x = rng.next_gaussian() * cfg.init_std;
                }
            }
        }
        Ok(PolicyParams { cfg: *cfg, data, offs })
    }

    /// Zero parameters everywhere (diagnostics: makes the next-token
    /// distribution exactly uniform).
    pub fn zeros(cfg: &PolicyConfig) -> Result<Self, PolicyError> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        Ok(PolicyParams { cfg: *cfg, data: vec![0.0; layout.total], offs: Offsets::new(cfg) })
    }

    /// Fill every coordinate with gaussian noise (diagnostics and gradient
    /// checks, where all paths should carry signal).
    pub fn randomize_all(&mut self, rng: &mut StreamRng, std: f64) {
        for x in &mut self.data {
            *x = rng.next_gaussian() * std;
        }
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.cfg)
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn from_parts(cfg: PolicyConfig, data: Vec<f64>) -> Result<Self, PolicyError> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if data.len() != layout.total {
            return Err(PolicyError::Checkpoint(format!(
                "payload has {} parameters, layout wants {}",
                data.len(),
                layout.total
            )));
        }
        Ok(PolicyParams { cfg, data, offs: Offsets::new(&cfg) })
    }
}

// ---------------------------------------------------------------------------
// Numerics
// ---------------------------------------------------------------------------

/// Numerically safe softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// `log softmax` with the same max-subtraction.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - max - lse).collect()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `out = x / rms(x)`; returns the inverse RMS needed by the backward pass.
fn rmsnorm(x: &[f64], out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let ms = x.iter().map(|v| v * v).sum::<f64>() / n + RMSNORM_EPS;
    let inv = 1.0 / ms.sqrt();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v * inv;
    }
    inv
}

/// Gradient of rmsnorm: `dx = inv*dy - inv^3/n * (dy . x) * x`.
fn rmsnorm_bwd(dy: &[f64], x: &[f64], inv: f64, dx: &mut [f64]) {
    let n = x.len() as f64;
    let dot: f64 = dy.iter().zip(x).map(|(a, b)| a * b).sum();
    let coef = inv * inv * inv / n * dot;
    for i in 0..x.len() {
        dx[i] = inv * dy[i] - coef * x[i];
    }
}

/// `out = W x` for row-major `W: [rows, cols]`.
fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `dx += W^T dy`.
fn matvec_t_accum(w: &[f64], rows: usize, cols: usize, dy: &[f64], dx: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let g = dy[r];
        for c in 0..cols {
            dx[c] += row[c] * g;
        }
    }
}

/// `dW += dy (outer) x`.
fn outer_accum(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        let row = &mut dw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            row[c] += g * x[c];
        }
    }
}

// ---------------------------------------------------------------------------
// Forward pass (shared by sampling, scoring, and training)
// ---------------------------------------------------------------------------

/// Per-block per-position intermediates retained for backprop.
#[derive(Debug, Default, Clone)]
struct BlockTape {
    h_in: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    a_inv: Vec<f64>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// probs[t][h] is the attention row of head `h` at query position `t`
    /// (length `t + 1`).
    probs: Vec<Vec<Vec<f64>>>,
    ctx: Vec<Vec<f64>>,
    h_mid: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    m_inv: Vec<f64>,
    u_pre: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
}

/// Forward activations for a full token sequence.
#[derive(Debug, Clone)]
pub(crate) struct Tape {
    tokens: TokenSeq,
    blocks: Vec<BlockTape>,
    final_h: Vec<Vec<f64>>,
    final_n: Vec<Vec<f64>>,
    final_inv: Vec<f64>,
    logits: Vec<Vec<f64>>,
}

impl Tape {
    pub(crate) fn len(&self) -> usize {
        self.tokens.len()
    }

    pub(crate) fn logits_at(&self, pos: usize) -> &[f64] {
        &self.logits[pos]
    }
}

/// Incremental decoder state: the per-block K/V history. Both batch and
/// token-by-token code paths advance through [`step_position`], so their
/// floating-point results are identical.
struct DecodeState {
    k: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<Vec<f64>>>,
    pos: usize,
}

impl DecodeState {
    fn new(n_blocks: usize) -> Self {
        DecodeState { k: vec![Vec::new(); n_blocks], v: vec![Vec::new(); n_blocks], pos: 0 }
    }
}

/// Advance one position: consume `token` at `state.pos`, return the logits
/// predicting the next token. Records intermediates when a tape is given.
fn step_position(
    params: &PolicyParams,
    state: &mut DecodeState,
    token: TokenId,
    mut tape: Option<&mut Tape>,
) -> Result<Vec<f64>, PolicyError> {
    let cfg = &params.cfg;
    let d = cfg.embed_dim;
    let heads = cfg.n_heads;
    let hd = d / heads;
    let m_dim = cfg.mlp_hidden;
    let t = state.pos;
    if t >= cfg.context_len {
        return Err(PolicyError::ContextOverflow { len: t + 1, window: cfg.context_len });
    }
    if token as usize >= cfg.vocab_size {
        return Err(PolicyError::TokenOutOfRange { token, vocab_size: cfg.vocab_size });
    }
    let p = &params.data;
    let offs = &params.offs;
    let scale = 1.0 / (hd as f64).sqrt();

    // Embedding sum.
    let mut x = vec![0.0; d];
    let te = &p[offs.tok_emb + token as usize * d..offs.tok_emb + (token as usize + 1) * d];
    let pe = &p[offs.pos_emb + t * d..offs.pos_emb + (t + 1) * d];
    for i in 0..d {
        x[i] = te[i] + pe[i];
    }

    for (b, bo) in offs.blocks.iter().enumerate() {
        let h_in = x.clone();
        let mut a = vec![0.0; d];
        let a_inv = rmsnorm(&h_in, &mut a);

        let mut q = vec![0.0; d];
        let mut k = vec![0.0; d];
        let mut v = vec![0.0; d];
        matvec(&p[bo.wq..bo.wq + d * d], d, d, &a, &mut q);
        matvec(&p[bo.wk..bo.wk + d * d], d, d, &a, &mut k);
        matvec(&p[bo.wv..bo.wv + d * d], d, d, &a, &mut v);
        state.k[b].push(k);
        state.v[b].push(v);

        let mut ctx = vec![0.0; d];
        let mut head_probs: Vec<Vec<f64>> = Vec::with_capacity(heads);
        for h in 0..heads {
            let qs = &q[h * hd..(h + 1) * hd];
            let mut scores = Vec::with_capacity(t + 1);
            for j in 0..=t {
                let ks = &state.k[b][j][h * hd..(h + 1) * hd];
                scores.push(qs.iter().zip(ks).map(|(a, b)| a * b).sum::<f64>() * scale);
            }
            let probs = softmax(&scores);
            for (j, &pj) in probs.iter().enumerate() {
                let vs = &state.v[b][j][h * hd..(h + 1) * hd];
                for i in 0..hd {
                    ctx[h * hd + i] += pj * vs[i];
                }
            }
            head_probs.push(probs);
        }

        let mut o = vec![0.0; d];
        matvec(&p[bo.wo..bo.wo + d * d], d, d, &ctx, &mut o);
        let mut h_mid = vec![0.0; d];
        for i in 0..d {
            h_mid[i] = h_in[i] + o[i];
        }

        let mut m = vec![0.0; d];
        let m_inv = rmsnorm(&h_mid, &mut m);
        let mut u_pre = vec![0.0; m_dim];
        matvec(&p[bo.w1..bo.w1 + m_dim * d], m_dim, d, &m, &mut u_pre);
        for (up, bias) in u_pre.iter_mut().zip(&p[bo.b1..bo.b1 + m_dim]) {
            *up += bias;
        }
        let u: Vec<f64> = u_pre.iter().map(|&z| silu(z)).collect();
        let mut mlp_out = vec![0.0; d];
        matvec(&p[bo.w2..bo.w2 + d * m_dim], d, m_dim, &u, &mut mlp_out);
        for i in 0..d {
            x[i] = h_mid[i] + mlp_out[i] + p[bo.b2 + i];
        }

        if let Some(tape) = tape.as_deref_mut() {
            let bt = &mut tape.blocks[b];
            bt.h_in.push(h_in);
            bt.a.push(a);
            bt.a_inv.push(a_inv);
            bt.q.push(q);
            bt.k.push(state.k[b][t].clone());
            bt.v.push(state.v[b][t].clone());
            bt.probs.push(head_probs);
            bt.ctx.push(ctx);
            bt.h_mid.push(h_mid);
            bt.m.push(m);
            bt.m_inv.push(m_inv);
            bt.u_pre.push(u_pre);
            bt.u.push(u);
        }
    }

    let mut fin = vec![0.0; d];
    let fin_inv = rmsnorm(&x, &mut fin);
    let mut logits = vec![0.0; cfg.vocab_size];
    matvec(&p[offs.out_proj..offs.out_proj + cfg.vocab_size * d], cfg.vocab_size, d, &fin, &mut logits);

    if let Some(tape) = tape.as_deref_mut() {
        tape.tokens.push(token);
        tape.final_h.push(x);
        tape.final_n.push(fin);
        tape.final_inv.push(fin_inv);
        tape.logits.push(logits.clone());
    }
    state.pos += 1;
    Ok(logits)
}

/// Run the model over a whole context, retaining all activations.
pub(crate) fn forward_tape(params: &PolicyParams, tokens: &[TokenId]) -> Result<Tape, PolicyError> {
    if tokens.is_empty() {
        return Err(PolicyError::EmptyContext);
    }
    if tokens.len() > params.cfg.context_len {
        return Err(PolicyError::ContextOverflow {
            len: tokens.len(),
            window: params.cfg.context_len,
        });
    }
    let mut tape = Tape {
        tokens: Vec::with_capacity(tokens.len()),
        blocks: vec![BlockTape::default(); params.cfg.n_blocks],
        final_h: Vec::new(),
        final_n: Vec::new(),
        final_inv: Vec::new(),
        logits: Vec::new(),
    };
    let mut state = DecodeState::new(params.cfg.n_blocks);
    for &tok in tokens {
        step_position(params, &mut state, tok, Some(&mut tape))?;
    }
    Ok(tape)
}

/// Backpropagate `d(loss)/d(logits)` through a tape; returns the flat
/// parameter gradient. `dlogits` must have one row per tape position.
pub(crate) fn backward(params: &PolicyParams, tape: &Tape, dlogits: &[Vec<f64>]) -> Vec<f64> {
    let cfg = &params.cfg;
    let d = cfg.embed_dim;
    let heads = cfg.n_heads;
    let hd = d / heads;
    let m_dim = cfg.mlp_hidden;
    let t_len = tape.tokens.len();
    assert_eq!(dlogits.len(), t_len, "one dlogits row per position");
    let p = &params.data;
    let offs = &params.offs;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut g = vec![0.0; p.len()];

    // Output head and final norm.
    let mut dh: Vec<Vec<f64>> = vec![vec![0.0; d]; t_len];
    {
        let wout = &p[offs.out_proj..offs.out_proj + cfg.vocab_size * d];
        let gout = &mut g[offs.out_proj..offs.out_proj + cfg.vocab_size * d];
        for t in 0..t_len {
            outer_accum(gout, &dlogits[t], &tape.final_n[t]);
            let mut dfn = vec![0.0; d];
            matvec_t_accum(wout, cfg.vocab_size, d, &dlogits[t], &mut dfn);
            rmsnorm_bwd(&dfn, &tape.final_h[t], tape.final_inv[t], &mut dh[t]);
        }
    }

    for (b, bo) in offs.blocks.iter().enumerate().rev() {
        let bt = &tape.blocks[b];
        let mut dh_mid: Vec<Vec<f64>> = vec![vec![0.0; d]; t_len];

        // MLP sublayer.
        for t in 0..t_len {
            let dy = &dh[t];
            // x = h_mid + W2 u + b2
            outer_accum(&mut g[bo.w2..bo.w2 + d * m_dim], dy, &bt.u[t]);
            for i in 0..d {
                g[bo.b2 + i] += dy[i];
            }
            let mut du = vec![0.0; m_dim];
            matvec_t_accum(&p[bo.w2..bo.w2 + d * m_dim], d, m_dim, dy, &mut du);
            for (j, dv) in du.iter_mut().enumerate() {
                *dv *= silu_deriv(bt.u_pre[t][j]);
            }
            outer_accum(&mut g[bo.w1..bo.w1 + m_dim * d], &du, &bt.m[t]);
            for j in 0..m_dim {
                g[bo.b1 + j] += du[j];
            }
            let mut dm = vec![0.0; d];
            matvec_t_accum(&p[bo.w1..bo.w1 + m_dim * d], m_dim, d, &du, &mut dm);
            let mut dmid = vec![0.0; d];
            rmsnorm_bwd(&dm, &bt.h_mid[t], bt.m_inv[t], &mut dmid);
            for i in 0..d {
                dh_mid[t][i] = dy[i] + dmid[i];
            }
        }

        // Attention sublayer.
        let mut da: Vec<Vec<f64>> = vec![vec![0.0; d]; t_len];
        let mut dk: Vec<Vec<f64>> = vec![vec![0.0; d]; t_len];
        let mut dv: Vec<Vec<f64>> = vec![vec![0.0; d]; t_len];
        for t in 0..t_len {
            let dy = &dh_mid[t]; // gradient into o = Wo ctx
            outer_accum(&mut g[bo.wo..bo.wo + d * d], dy, &bt.ctx[t]);
            let mut dctx = vec![0.0; d];
            matvec_t_accum(&p[bo.wo..bo.wo + d * d], d, d, dy, &mut dctx);
            let mut dq = vec![0.0; d];
            for h in 0..heads {
                let probs = &bt.probs[t][h];
                let dctx_h = &dctx[h * hd..(h + 1) * hd];
                // dp[j] = dctx_h . v_j ; dv_j += p_j * dctx_h
                let mut dp = vec![0.0; t + 1];
                for j in 0..=t {
                    let vj = &bt.v[j][h * hd..(h + 1) * hd];
                    dp[j] = dctx_h.iter().zip(vj).map(|(a, b)| a * b).sum();
                    let pj = probs[j];
                    let dvj = &mut dv[j][h * hd..(h + 1) * hd];
                    for i in 0..hd {
                        dvj[i] += pj * dctx_h[i];
                    }
                }
                // softmax backward
                let sdot: f64 = probs.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for j in 0..=t {
                    let ds = probs[j] * (dp[j] - sdot) * scale;
                    let kj = &bt.k[j][h * hd..(h + 1) * hd];
                    let qt = &bt.q[t][h * hd..(h + 1) * hd];
                    for i in 0..hd {
                        dq[h * hd + i] += ds * kj[i];
                        dk[j][h * hd + i] += ds * qt[i];
                    }
                }
            }
            outer_accum(&mut g[bo.wq..bo.wq + d * d], &dq, &bt.a[t]);
            matvec_t_accum(&p[bo.wq..bo.wq + d * d], d, d, &dq, &mut da[t]);
        }
        for t in 0..t_len {
            outer_accum(&mut g[bo.wk..bo.wk + d * d], &dk[t], &bt.a[t]);
            matvec_t_accum(&p[bo.wk..bo.wk + d * d], d, d, &dk[t], &mut da[t]);
            outer_accum(&mut g[bo.wv..bo.wv + d * d], &dv[t], &bt.a[t]);
            matvec_t_accum(&p[bo.wv..bo.wv + d * d], d, d, &dv[t], &mut da[t]);
        }
        // Through the first rmsnorm and the attention residual.
        for t in 0..t_len {
            let mut din = vec![0.0; d];
            rmsnorm_bwd(&da[t], &bt.h_in[t], bt.a_inv[t], &mut din);
            for i in 0..d {
                dh[t][i] = dh_mid[t][i] + din[i];
            }
        }
    }

    // Embeddings.
    for t in 0..t_len {
        let tok = tape.tokens[t] as usize;
        for i in 0..d {
            g[offs.tok_emb + tok * d + i] += dh[t][i];
            g[offs.pos_emb + t * d + i] += dh[t][i];
        }
    }
    g
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Next-token logits after consuming `context` (non-empty, within the
/// window).
pub fn forward_logits(params: &PolicyParams, context: &[TokenId]) -> Result<Vec<f64>, PolicyError> {
    if context.is_empty() {
        return Err(PolicyError::EmptyContext);
    }
    if context.len() > params.cfg.context_len {
        return Err(PolicyError::ContextOverflow {
            len: context.len(),
            window: params.cfg.context_len,
        });
    }
    let mut state = DecodeState::new(params.cfg.n_blocks);
    let mut logits = Vec::new();
    for &tok in context {
        logits = step_position(params, &mut state, tok, None)?;
    }
    Ok(logits)
}

/// A sampled continuation with the temperature-1 log-probability of every
/// generated token (including EOS, if generated).
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub tokens: TokenSeq,
    pub logprobs: Vec<f64>,
}

/// Sample up to `max_new_tokens` tokens after `prompt` at the given
/// temperature (`0` selects the argmax at every step). Generation stops at
/// EOS or when the context window fills. Recorded log-probabilities are
/// always at temperature 1.
pub fn sample_completion(
    params: &PolicyParams,
    prompt: &[TokenId],
    temperature: f64,
    max_new_tokens: usize,
    eos_id: TokenId,
    rng: &mut StreamRng,
) -> Result<Completion, PolicyError> {
    if prompt.is_empty() {
        return Err(PolicyError::EmptyContext);
    }
    if prompt.len() > params.cfg.context_len {
        return Err(PolicyError::ContextOverflow {
            len: prompt.len(),
            window: params.cfg.context_len,
        });
    }
    if !(temperature >= 0.0) || !temperature.is_finite() {
        return Err(PolicyError::BadTemperature(temperature));
    }
    let mut state = DecodeState::new(params.cfg.n_blocks);
    let mut logits = Vec::new();
    for &tok in prompt {
        logits = step_position(params, &mut state, tok, None)?;
    }
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    let budget = max_new_tokens.min(params.cfg.context_len - prompt.len());
    for _ in 0..budget {
        let lsm = log_softmax(&logits);
        let choice = if temperature == 0.0 {
            let mut best = 0usize;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            best
        } else {
            let scaled: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
            rng.next_categorical(&softmax(&scaled))
        };
        tokens.push(choice as TokenId);
        logprobs.push(lsm[choice]);
        if choice as TokenId == eos_id {
            break;
        }
        if state.pos >= params.cfg.context_len {
            break;
        }
        logits = step_position(params, &mut state, choice as TokenId, None)?;
    }
    Ok(Completion { tokens, logprobs })
}

/// Positions in `prefix ++ continuation` whose logits predict the
/// continuation tokens.
fn continuation_positions(prefix_len: usize, cont_len: usize) -> impl Iterator<Item = usize> {
    (0..cont_len).map(move |j| prefix_len - 1 + j)
}

/// `sum_t log pi(continuation_t | prefix, continuation_<t)`, streaming
/// (no tape).
pub fn sequence_logprob(
    params: &PolicyParams,
    prefix: &[TokenId],
    continuation: &[TokenId],
) -> Result<f64, PolicyError> {
    if prefix.is_empty() {
        return Err(PolicyError::EmptyContext);
    }
    let total_len = prefix.len() + continuation.len();
    if total_len > params.cfg.context_len {
        return Err(PolicyError::ContextOverflow { len: total_len, window: params.cfg.context_len });
    }
    let mut state = DecodeState::new(params.cfg.n_blocks);
    let mut logits = Vec::new();
    for &tok in prefix {
        logits = step_position(params, &mut state, tok, None)?;
    }
    let mut total = 0.0;
    for (j, &tok) in continuation.iter().enumerate() {
        if tok as usize >= params.cfg.vocab_size {
            return Err(PolicyError::TokenOutOfRange { token: tok, vocab_size: params.cfg.vocab_size });
        }
        total += log_softmax(&logits)[tok as usize];
        if j + 1 < continuation.len() {
            logits = step_position(params, &mut state, tok, None)?;
        }
    }
    Ok(total)
}

/// [`sequence_logprob`] and its gradient with respect to every parameter.
pub fn grad_sequence_logprob(
    params: &PolicyParams,
    prefix: &[TokenId],
    continuation: &[TokenId],
) -> Result<(f64, Vec<f64>), PolicyError> {
    if continuation.is_empty() {
        return Ok((0.0, vec![0.0; params.n_params()]));
    }
    let mut tokens = prefix.to_vec();
    tokens.extend_from_slice(&continuation[..continuation.len() - 1]);
    let tape = forward_tape(params, &tokens)?;
    let mut dlogits = vec![vec![0.0; params.cfg.vocab_size]; tape.len()];
    let mut value = 0.0;
    for (j, pos) in continuation_positions(prefix.len(), continuation.len()).enumerate() {
        let target = continuation[j] as usize;
        if target >= params.cfg.vocab_size {
            return Err(PolicyError::TokenOutOfRange {
                token: continuation[j],
                vocab_size: params.cfg.vocab_size,
            });
        }
        let lsm = log_softmax(tape.logits_at(pos));
        value += lsm[target];
        // d log p[target] / d logit_i = 1[i == target] - p_i
        for (i, &l) in lsm.iter().enumerate() {
            dlogits[pos][i] -= l.exp();
        }
        dlogits[pos][target] += 1.0;
    }
    let grad = backward(params, &tape, &dlogits);
    Ok((value, grad))
}

/// Expected value of a per-token payoff under the next-token distribution
/// after `context`, with its exact parameter gradient.
///
/// `E = sum_i softmax(logits)_i * payoff_i`; the gradient flows through
/// `dE/dlogit_i = p_i (payoff_i - E)`. Useful as an analytic ground truth
/// for score-function (REINFORCE-style) estimators on enumerable steps.
pub fn grad_expected_next_payoff(
    params: &PolicyParams,
    context: &[TokenId],
    payoff: &[f64],
) -> Result<(f64, Vec<f64>), PolicyError> {
    if payoff.len() != params.cfg.vocab_size {
        return Err(PolicyError::BadConfig(format!(
            "payoff covers {} tokens, vocab has {}",
            payoff.len(),
            params.cfg.vocab_size
        )));
    }
    let tape = forward_tape(params, context)?;
    let pos = tape.len() - 1;
    let probs = softmax(tape.logits_at(pos));
    let expected: f64 = probs.iter().zip(payoff).map(|(p, r)| p * r).sum();
    let mut dlogits = vec![vec![0.0; params.cfg.vocab_size]; tape.len()];
    for i in 0..params.cfg.vocab_size {
        dlogits[pos][i] = probs[i] * (payoff[i] - expected);
    }
    let grad = backward(params, &tape, &dlogits);
    Ok((expected, grad))
}

/// Sum of next-token distribution entropies at each sampled prefix of
/// `continuation`, with its parameter gradient.
pub fn entropy_bonus(
    params: &PolicyParams,
    prefix: &[TokenId],
    continuation: &[TokenId],
) -> Result<(f64, Vec<f64>), PolicyError> {
    if continuation.is_empty() {
        return Ok((0.0, vec![0.0; params.n_params()]));
    }
    let mut tokens = prefix.to_vec();
    tokens.extend_from_slice(&continuation[..continuation.len() - 1]);
    let tape = forward_tape(params, &tokens)?;
    let mut dlogits = vec![vec![0.0; params.cfg.vocab_size]; tape.len()];
    let mut value = 0.0;
    for pos in continuation_positions(prefix.len(), continuation.len()) {
        let lsm = log_softmax(tape.logits_at(pos));
        let h: f64 = lsm.iter().map(|&l| -l.exp() * l).sum();
        value += h;
        // dH/d logit_i = -p_i (log p_i + H)
        for (i, &l) in lsm.iter().enumerate() {
            dlogits[pos][i] = -l.exp() * (l + h);
        }
    }
    let grad = backward(params, &tape, &dlogits);
    Ok((value, grad))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// A persisted policy: parameters plus provenance (vocabulary fingerprint,
/// training step, RNG state at save time).
#[derive(Debug, Clone)]
pub struct PolicyCheckpoint {
    pub params: PolicyParams,
    pub vocab_hash: u64,
    pub step: u64,
    pub rng_state: (u64, u64),
}

impl PolicyCheckpoint {
    /// Serialize: magic, version, provenance, config, shape table,
    /// little-endian `f64` payload, trailing checksum.
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.params.config();
        let layout = self.params.layout();
        let mut w = ByteWriter::new(CKPT_MAGIC, CKPT_VERSION);
        w.u64(self.vocab_hash);
        w.u64(self.step);
        w.u64(self.rng_state.0);
        w.u64(self.rng_state.1);
        for dim in [cfg.vocab_size, cfg.context_len, cfg.embed_dim, cfg.n_heads, cfg.n_blocks, cfg.mlp_hidden] {
            w.u32(dim as u32);
        }
        w.f64(cfg.init_std);
        w.u32(layout.segments.len() as u32);
        for seg in &layout.segments {
            w.str(&seg.name);
            w.u32(seg.shape.len() as u32);
            for &s in &seg.shape {
                w.u32(s as u32);
            }
        }
        w.u64(self.params.data.len() as u64);
        for &x in &self.params.data {
            w.f64(x);
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, PolicyError> {
        let mut r = ByteReader::open(data, CKPT_MAGIC, "CIBPOLC1", CKPT_VERSION)?;
        let vocab_hash = r.u64()?;
        let step = r.u64()?;
        let rng_state = (r.u64()?, r.u64()?);
        let cfg = PolicyConfig {
            vocab_size: r.u32()? as usize,
            context_len: r.u32()? as usize,
            embed_dim: r.u32()? as usize,
            n_heads: r.u32()? as usize,
            n_blocks: r.u32()? as usize,
            mlp_hidden: r.u32()? as usize,
            init_std: r.f64()?,
        };
        cfg.validate()
            .map_err(|e| PolicyError::Checkpoint(format!("stored config invalid: {e}")))?;
        let layout = Layout::new(&cfg);
        let n_segs = r.u32()? as usize;
        if n_segs != layout.segments.len() {
            return Err(PolicyError::Checkpoint(format!(
                "shape table has {n_segs} segments, config implies {}",
                layout.segments.len()
            )));
        }
        for seg in &layout.segments {
            let name = r.str()?;
            let ndims = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                shape.push(r.u32()? as usize);
            }
            if name != seg.name || shape != seg.shape {
                return Err(PolicyError::Checkpoint(format!(
                    "segment {name} {shape:?} does not match expected {} {:?}",
                    seg.name, seg.shape
                )));
            }
        }
        let n = r.u64()? as usize;
        if n != layout.total {
            return Err(PolicyError::Checkpoint(format!(
                "payload of {n} parameters does not match layout total {}",
                layout.total
            )));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64()?);
        }
        if !r.exhausted() {
            return Err(PolicyError::Checkpoint("trailing bytes after payload".into()));
        }
        Ok(PolicyCheckpoint { params: PolicyParams::from_parts(cfg, data)?, vocab_hash, step, rng_state })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_bytes()).map_err(BinError::Io)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PolicyError> {
        let data = std::fs::read(path).map_err(BinError::Io)?;
        PolicyCheckpoint::from_bytes(&data)
    }
}

/// Anything that can complete prompts; lets evaluation run against real
/// checkpoints and against scripted stand-ins in tests.
pub trait CompletionPolicy: Sync {
    fn vocab_hash(&self) -> u64;
    fn sample(
        &self,
        prompt: &[TokenId],
        temperature: f64,
        max_new_tokens: usize,
        eos_id: TokenId,
        rng: &mut StreamRng,
    ) -> Result<Completion, PolicyError>;
}

impl CompletionPolicy for PolicyCheckpoint {
    fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    fn sample(
        &self,
        prompt: &[TokenId],
        temperature: f64,
        max_new_tokens: usize,
        eos_id: TokenId,
        rng: &mut StreamRng,
    ) -> Result<Completion, PolicyError> {
        sample_completion(&self.params, prompt, temperature, max_new_tokens, eos_id, rng)
    }
}
