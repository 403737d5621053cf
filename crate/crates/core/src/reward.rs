//! Reward models: accuracy plus weighted compression.
//!
//! Every model scores a completion as
//!
//! ```text
//!     total = r_acc + beta * r_min
//! ```
//!
//! where `r_acc` is the binary verifier output on the answer span and
//! `r_min = -C(z)` is the negative code length of the *trace tokens only*
//! under the model's prior — answer tokens are never costed. The model
//! kind is determined by the prior:
//!
//! - uniform prior      -> `linear_length`: `beta * C(z) = alpha * |z|`
//!   with slope `alpha = beta * log |V|`, a plain length penalty;
//! - length-Laplace     -> `lcpo_exact`: a target-length penalty
//!   `beta * |n_gold - |z|| / b`;
//! - n-gram or policy-snapshot prior -> `cib`: content-aware compression.
//!
//! Optional shaping (off by default): dividing `r_min` by trace length and
//! clipping `r_min` below. Both transforms are applied to the stored
//! `r_min`, so the additive decomposition above always holds exactly.

use thiserror::Error;

use crate::prior::{self, PriorError, PriorKind, SharedPrior, UniformPrior};
use crate::sample::RewardBreakdown;
use crate::vocab::{split_completion, TokenId, Vocab};
use crate::verifier::{self, VerifierConfig, VerifierError};

use std::sync::Arc;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error("r_min clip floor must be positive, got {0}")]
    BadClip(f64),
    #[error("linear length penalty alpha must be finite and non-negative, got {0}")]
    BadAlpha(f64),
}

/// Which penalty family a model realizes (derived from its prior).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    Cib,
    LinearLength,
    LcpoExact,
}

impl std::fmt::Display for RewardKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RewardKind::Cib => write!(f, "cib"),
            RewardKind::LinearLength => write!(f, "linear_length"),
            RewardKind::LcpoExact => write!(f, "lcpo_exact"),
        }
    }
}

/// A complete scoring rule: verifier + prior + compression weight.
pub struct RewardModel {
    kind: RewardKind,
    beta: f64,
    prior: SharedPrior,
    verifier: VerifierConfig,
    /// Divide `r_min` by `max(1, |z|)` before weighting (default off).
    pub normalize_r_min_by_len: bool,
    /// Clip `r_min` below at `-floor` before weighting (default off).
    pub r_min_clip: Option<f64>,
}

impl RewardModel {
    /// Build a model; the kind follows the prior family.
    pub fn new(prior: SharedPrior, beta: f64, verifier: VerifierConfig) -> Result<Self, RewardError> {
        verifier.validate()?;
        let kind = match prior.kind() {
            PriorKind::Uniform => RewardKind::LinearLength,
            PriorKind::LaplaceLength => RewardKind::LcpoExact,
            PriorKind::Ngram | PriorKind::PolicySnapshot => RewardKind::Cib,
        };
        Ok(RewardModel {
            kind,
            beta,
            prior,
            verifier,
            normalize_r_min_by_len: false,
            r_min_clip: None,
        })
    }

    /// Explicit per-token length penalty `alpha * |z|`, realized as the
    /// uniform prior with `beta = alpha / log |V|` so that a run
    /// parameterized by `alpha` and one parameterized by the derived `beta`
    /// compute bit-identical rewards.
    pub fn linear_length(
        alpha: f64,
        vocab_size: usize,
        verifier: VerifierConfig,
    ) -> Result<Self, RewardError> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(RewardError::BadAlpha(alpha));
        }
        let prior = UniformPrior::new(vocab_size);
        let beta = alpha / prior.ln_vocab();
        RewardModel::new(Arc::new(prior), beta, verifier)
    }

    pub fn kind(&self) -> RewardKind {
        self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn prior(&self) -> &SharedPrior {
        &self.prior
    }

    pub fn verifier(&self) -> VerifierConfig {
        self.verifier
    }

    /// Apply the optional shaping transforms to a raw minimality reward.
    fn shape_r_min(&self, raw: f64, trace_len: usize) -> Result<f64, RewardError> {
        let mut r = raw;
        if self.normalize_r_min_by_len {
            r /= trace_len.max(1) as f64;
        }
        if let Some(floor) = self.r_min_clip {
            if !(floor > 0.0) {
                return Err(RewardError::BadClip(floor));
            }
            r = r.max(-floor);
        }
        Ok(r)
    }

    /// Score a pre-split completion against a gold answer.
    pub fn score_parts(
        &self,
        gold: &[TokenId],
        trace: &[TokenId],
        answer: &[TokenId],
    ) -> Result<RewardBreakdown, RewardError> {
        let correct = verifier::check_answer_ids(gold, answer);
        let r_acc = if correct { 1.0 } else { 0.0 };
        let raw = prior::minimality_reward(self.prior.as_ref(), trace)?;
        let r_min = self.shape_r_min(raw, trace.len())?;
        Ok(RewardBreakdown::new(r_acc, r_min, self.beta))
    }

    /// Split a raw completion at the answer delimiter and score it. Only
    /// the trace span enters `r_min`; only the answer span enters `r_acc`.
    pub fn score(
        &self,
        vocab: &Vocab,
        gold: &[TokenId],
        completion: &[TokenId],
    ) -> Result<RewardBreakdown, RewardError> {
        let (trace, answer) = split_completion(vocab, completion);
        self.score_parts(gold, &trace, &answer)
    }

    /// Per-token costs over a trace with running totals. Only available
    /// for per-token priors.
    pub fn per_token_report(&self, trace: &[TokenId]) -> Result<Vec<PerTokenCost>, RewardError> {
        let stream = prior::surprisal_stream(self.prior.as_ref(), trace)?;
        let mut cumulative = 0.0;
        Ok(trace
            .iter()
            .zip(stream)
            .map(|(&token, surprisal)| {
                cumulative += surprisal;
                PerTokenCost { token, surprisal, cumulative }
            })
            .collect())
    }
}

/// One row of a per-token cost report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerTokenCost {
    pub token: TokenId,
    /// `-log Q(z_t | z_<t)` in nats.
    pub surprisal: f64,
    /// Running sum of surprisals up to and including this token.
    pub cumulative: f64,
}
