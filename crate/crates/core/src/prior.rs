//! Reference priors and trace code lengths.
//!
//! A prior `Q` assigns probability to reasoning traces *unconditionally* —
//! it never sees the prompt. The code length of a trace under a per-token
//! prior is
//!
//! ```text
//!     C(z) = sum_t -log Q(z_t | z_<t)        (nats)
//! ```
//!
//! and the minimality reward fed to the trainer is `r_min = -C(z)`.
//! Implementations:
//!
//! - [`UniformPrior`]: every token costs `log |V|`, so `C(z) = |z| log |V|`
//!   exactly and weighting `r_min` by `beta` is an explicit per-token length
//!   penalty with slope `alpha = beta * log |V|`.
//! - [`NGramPrior`]: add-k smoothed n-gram counts fitted on a trace corpus,
//!   the desk-scale stand-in for a frozen reference language model.
//! - [`LaplaceLengthPrior`]: a sequence-level score `-|n_gold - |z|| / b`
//!   (normalization constant fixed to zero); weighting it reproduces an
//!   exact target-length penalty. It has no per-token decomposition.
//! - [`PolicySnapshotPrior`]: a frozen policy checkpoint queried without
//!   any prompt context.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::binfmt::{BinError, ByteReader, ByteWriter};
use crate::policy::{self, PolicyError, PolicyParams};
use crate::vocab::{TokenId, TokenSeq, Vocab};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("prior has no per-token decomposition")]
    NotPerToken,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid n-gram config: {0}")]
    BadConfig(String),
    #[error("token {token} out of range for vocab of size {vocab_size}")]
    TokenOutOfRange { token: TokenId, vocab_size: usize },
    #[error("prior file: {0}")]
    File(#[from] BinError),
    #[error("prior policy forward failed: {0}")]
    Policy(#[from] PolicyError),
}

/// Which family a prior belongs to; reward models derive their kind from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Uniform,
    Ngram,
    LaplaceLength,
    PolicySnapshot,
}

/// An unconditional distribution over traces.
pub trait PriorModel {
    fn kind(&self) -> PriorKind;

    /// Stable identifier for logs and CSV metadata.
    fn id(&self) -> String;

    /// Whether `next_logprob` is available (sequence-level priors say no).
    fn is_per_token(&self) -> bool;

    /// `log Q(next | prefix)`. Errors with [`PriorError::NotPerToken`] for
    /// sequence-level priors.
    fn next_logprob(&self, prefix: &[TokenId], next: TokenId) -> Result<f64, PriorError>;

    /// `log Q(z)` of a whole trace. For per-token priors this is the sum of
    /// `next_logprob` along the sequence.
    fn seq_logprob(&self, z: &[TokenId]) -> Result<f64, PriorError>;
}

/// Shareable prior handle used by reward models and the trainer.
pub type SharedPrior = Arc<dyn PriorModel + Send + Sync>;

/// Per-token surprisals `-log Q(z_t | z_<t)` in nats.
pub fn surprisal_stream(prior: &dyn PriorModel, z: &[TokenId]) -> Result<Vec<f64>, PriorError> {
    let mut out = Vec::with_capacity(z.len());
    for t in 0..z.len() {
        out.push(-prior.next_logprob(&z[..t], z[t])?);
    }
    Ok(out)
}

/// Trace code length `C(z) = -log Q(z) >= 0`.
pub fn trace_cost(prior: &dyn PriorModel, z: &[TokenId]) -> Result<f64, PriorError> {
    Ok(-prior.seq_logprob(z)?)
}

/// Minimality reward `r_min = -C(z) = log Q(z) <= 0`.
pub fn minimality_reward(prior: &dyn PriorModel, z: &[TokenId]) -> Result<f64, PriorError> {
    prior.seq_logprob(z)
}

// ---------------------------------------------------------------------------
// Uniform prior
// ---------------------------------------------------------------------------

/// Maximum-entropy prior: every token has probability `1/|V|`.
#[derive(Debug, Clone)]
pub struct UniformPrior {
    vocab_size: usize,
    ln_v: f64,
}

impl UniformPrior {
    pub fn new(vocab_size: usize) -> Self {
        assert!(vocab_size >= 2, "uniform prior needs at least two tokens");
        UniformPrior { vocab_size, ln_v: (vocab_size as f64).ln() }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// `log |V|`: the per-token cost, i.e. the length-penalty slope divisor.
    pub fn ln_vocab(&self) -> f64 {
        self.ln_v
    }

    fn check(&self, token: TokenId) -> Result<(), PriorError> {
        if (token as usize) < self.vocab_size {
            Ok(())
        } else {
            Err(PriorError::TokenOutOfRange { token, vocab_size: self.vocab_size })
        }
    }
}

impl PriorModel for UniformPrior {
    fn kind(&self) -> PriorKind {
        PriorKind::Uniform
    }

    fn id(&self) -> String {
        format!("uniform(V={})", self.vocab_size)
    }

    fn is_per_token(&self) -> bool {
        true
    }

    fn next_logprob(&self, _prefix: &[TokenId], next: TokenId) -> Result<f64, PriorError> {
        self.check(next)?;
        Ok(-self.ln_v)
    }

    /// Closed form `-|z| log |V|`, exact in one multiplication so the cost
    /// identity `C(z) == |z| * log |V|` holds bitwise.
    fn seq_logprob(&self, z: &[TokenId]) -> Result<f64, PriorError> {
        for &t in z {
            self.check(t)?;
        }
        Ok(-(z.len() as f64) * self.ln_v)
    }
}

// ---------------------------------------------------------------------------
// Add-k n-gram prior
// ---------------------------------------------------------------------------

const NGRAM_MAGIC: &[u8; 8] = b"CIBNGRM1";
const NGRAM_VERSION: u32 = 1;

/// Add-k smoothed n-gram over token sequences.
///
/// Fitting counts every order-length window of each corpus sequence with the
/// context padded by BOS on the left and a single EOS appended, so the model
/// is a proper distribution over terminated sequences. Conditionals are
///
/// ```text
///     Q(t | ctx) = (count(ctx, t) + k) / (total(ctx) + k * |V|)
/// ```
///
/// Querying never mutates the table; unseen contexts fall back to the
/// all-smoothing value `1/|V|`.
#[derive(Debug, Clone)]
pub struct NGramPrior {
    order: usize,
    k: f64,
    vocab_size: usize,
    bos_id: TokenId,
    eos_id: TokenId,
    vocab_hash: u64,
    /// context -> (total count, per-token counts); BTreeMaps keep the
    /// persisted byte layout canonical.
    counts: BTreeMap<Vec<TokenId>, (u64, BTreeMap<TokenId, u64>)>,
}

impl NGramPrior {
    /// Fit on raw sequences with explicit vocabulary geometry. `order` is
    /// the window length (order 1 = unigram, empty context).
    pub fn fit_raw(
        corpus: &[TokenSeq],
        order: usize,
        k: f64,
        vocab_size: usize,
        bos_id: TokenId,
        eos_id: TokenId,
        vocab_hash: u64,
    ) -> Result<Self, PriorError> {
        if order == 0 {
            return Err(PriorError::BadConfig("order must be >= 1".into()));
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(PriorError::BadConfig(format!("smoothing k must be positive, got {k}")));
        }
        if vocab_size < 2 {
            return Err(PriorError::BadConfig(format!("vocab size {vocab_size} too small")));
        }
        if corpus.is_empty() {
            return Err(PriorError::EmptyCorpus);
        }
        let mut counts: BTreeMap<Vec<TokenId>, (u64, BTreeMap<TokenId, u64>)> = BTreeMap::new();
        for seq in corpus {
            for &t in seq {
                if t as usize >= vocab_size {
                    return Err(PriorError::TokenOutOfRange { token: t, vocab_size });
                }
            }
            let mut ext: Vec<TokenId> = vec![bos_id; order - 1];
            ext.extend_from_slice(seq);
            ext.push(eos_id);
            for i in (order - 1)..ext.len() {
                let ctx = ext[i - (order - 1)..i].to_vec();
                let entry = counts.entry(ctx).or_default();
                entry.0 += 1;
                *entry.1.entry(ext[i]).or_default() += 1;
            }
        }
        Ok(NGramPrior { order, k, vocab_size, bos_id, eos_id, vocab_hash, counts })
    }

    /// Fit over a [`Vocab`], taking geometry and fingerprint from it.
    pub fn fit(corpus: &[TokenSeq], order: usize, k: f64, vocab: &Vocab) -> Result<Self, PriorError> {
        NGramPrior::fit_raw(corpus, order, k, vocab.size(), vocab.bos_id(), vocab.eos_id(), vocab.hash())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.k
    }

    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    fn context_of<'a>(&self, prefix: &'a [TokenId], pad: &'a mut Vec<TokenId>) -> &'a [TokenId] {
        let need = self.order - 1;
        if prefix.len() >= need {
            &prefix[prefix.len() - need..]
        } else {
            pad.clear();
            pad.extend(std::iter::repeat(self.bos_id).take(need - prefix.len()));
            pad.extend_from_slice(prefix);
            pad.as_slice()
        }
    }

    /// Serialize to the versioned binary format: header
    /// `(order, k, vocab geometry, vocab hash)`, the sorted context/count
    /// table, and a trailing checksum. Little-endian throughout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(NGRAM_MAGIC, NGRAM_VERSION);
        w.u32(self.order as u32);
        w.f64(self.k);
        w.u32(self.vocab_size as u32);
        w.u32(self.bos_id);
        w.u32(self.eos_id);
        w.u64(self.vocab_hash);
        w.u64(self.counts.len() as u64);
        for (ctx, (total, by_tok)) in &self.counts {
            w.u32(ctx.len() as u32);
            for &t in ctx {
                w.u32(t);
            }
            w.u64(*total);
            w.u32(by_tok.len() as u32);
            for (&tok, &count) in by_tok {
                w.u32(tok);
                w.u64(count);
            }
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, PriorError> {
        let mut r = ByteReader::open(data, NGRAM_MAGIC, "CIBNGRM1", NGRAM_VERSION)?;
        let order = r.u32()? as usize;
        let k = r.f64()?;
        let vocab_size = r.u32()? as usize;
        let bos_id = r.u32()?;
        let eos_id = r.u32()?;
        let vocab_hash = r.u64()?;
        let n_ctx = r.u64()?;
        let mut counts = BTreeMap::new();
        for _ in 0..n_ctx {
            let clen = r.u32()? as usize;
            let mut ctx = Vec::with_capacity(clen);
            for _ in 0..clen {
                ctx.push(r.u32()?);
            }
            let total = r.u64()?;
            let n_tok = r.u32()? as usize;
            let mut by_tok = BTreeMap::new();
            for _ in 0..n_tok {
                let tok = r.u32()?;
                let count = r.u64()?;
                by_tok.insert(tok, count);
            }
            counts.insert(ctx, (total, by_tok));
        }
        if !r.exhausted() {
            return Err(PriorError::BadConfig("trailing bytes after count table".into()));
        }
        Ok(NGramPrior { order, k, vocab_size, bos_id, eos_id, vocab_hash, counts })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), PriorError> {
        std::fs::write(path, self.to_bytes()).map_err(BinError::Io)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PriorError> {
        let data = std::fs::read(path).map_err(BinError::Io)?;
        NGramPrior::from_bytes(&data)
    }
}

impl PriorModel for NGramPrior {
    fn kind(&self) -> PriorKind {
        PriorKind::Ngram
    }

    fn id(&self) -> String {
        format!("ngram(order={},k={})", self.order, self.k)
    }

    fn is_per_token(&self) -> bool {
        true
    }

    fn next_logprob(&self, prefix: &[TokenId], next: TokenId) -> Result<f64, PriorError> {
        if next as usize >= self.vocab_size {
            return Err(PriorError::TokenOutOfRange { token: next, vocab_size: self.vocab_size });
        }
        let mut pad = Vec::new();
        let ctx = self.context_of(prefix, &mut pad);
        let (total, count) = match self.counts.get(ctx) {
            Some((total, by_tok)) => (*total, by_tok.get(&next).copied().unwrap_or(0)),
            None => (0, 0),
        };
        let p = (count as f64 + self.k) / (total as f64 + self.k * self.vocab_size as f64);
        Ok(p.ln())
    }

    fn seq_logprob(&self, z: &[TokenId]) -> Result<f64, PriorError> {
        let mut acc = 0.0;
        for t in 0..z.len() {
            acc += self.next_logprob(&z[..t], z[t])?;
        }
        Ok(acc)
    }
}

// ---------------------------------------------------------------------------
// Laplace length prior
// ---------------------------------------------------------------------------

/// Sequence-level prior scoring only the trace length against a target:
/// `log Q(z) = -|n_gold - |z|| / b` with the normalization constant fixed
/// to zero. Weighted by `beta`, this is an exact target-length penalty.
#[derive(Debug, Clone)]
pub struct LaplaceLengthPrior {
    n_gold: usize,
    scale_b: f64,
}

impl LaplaceLengthPrior {
    pub fn new(n_gold: usize, scale_b: f64) -> Result<Self, PriorError> {
        if !(scale_b > 0.0) || !scale_b.is_finite() {
            return Err(PriorError::BadConfig(format!("laplace scale must be positive, got {scale_b}")));
        }
        Ok(LaplaceLengthPrior { n_gold, scale_b })
    }

    pub fn n_gold(&self) -> usize {
        self.n_gold
    }

    pub fn scale(&self) -> f64 {
        self.scale_b
    }
}

impl PriorModel for LaplaceLengthPrior {
    fn kind(&self) -> PriorKind {
        PriorKind::LaplaceLength
    }

    fn id(&self) -> String {
        format!("laplace(n_gold={},b={})", self.n_gold, self.scale_b)
    }

    fn is_per_token(&self) -> bool {
        false
    }

    fn next_logprob(&self, _prefix: &[TokenId], _next: TokenId) -> Result<f64, PriorError> {
        Err(PriorError::NotPerToken)
    }

    fn seq_logprob(&self, z: &[TokenId]) -> Result<f64, PriorError> {
        let diff = (self.n_gold as f64 - z.len() as f64).abs();
        Ok(-diff / self.scale_b)
    }
}

// ---------------------------------------------------------------------------
// Frozen policy snapshot prior
// ---------------------------------------------------------------------------

/// A frozen policy used as an unconditional trace prior. Queries condition
/// only on BOS plus the trace prefix — the prompt is never shown, keeping
/// the prior unconditional by construction.
pub struct PolicySnapshotPrior {
    params: PolicyParams,
    bos_id: TokenId,
    vocab_hash: u64,
}

impl PolicySnapshotPrior {
    pub fn new(params: PolicyParams, bos_id: TokenId, vocab_hash: u64) -> Self {
        PolicySnapshotPrior { params, bos_id, vocab_hash }
    }

    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    fn context(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        let mut ctx = Vec::with_capacity(prefix.len() + 1);
        ctx.push(self.bos_id);
        ctx.extend_from_slice(prefix);
        ctx
    }
}

impl PriorModel for PolicySnapshotPrior {
    fn kind(&self) -> PriorKind {
        PriorKind::PolicySnapshot
    }

    fn id(&self) -> String {
        format!("policy-snapshot(vocab={:016x})", self.vocab_hash)
    }

    fn is_per_token(&self) -> bool {
        true
    }

    fn next_logprob(&self, prefix: &[TokenId], next: TokenId) -> Result<f64, PriorError> {
        let logits = policy::forward_logits(&self.params, &self.context(prefix))?;
        if next as usize >= logits.len() {
            return Err(PriorError::TokenOutOfRange { token: next, vocab_size: logits.len() });
        }
        Ok(policy::log_softmax(&logits)[next as usize])
    }

    fn seq_logprob(&self, z: &[TokenId]) -> Result<f64, PriorError> {
        let mut acc = 0.0;
        for t in 0..z.len() {
            acc += self.next_logprob(&z[..t], z[t])?;
        }
        Ok(acc)
    }
}
