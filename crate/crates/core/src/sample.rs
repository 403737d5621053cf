//! Trace records and their JSONL serialization.
//!
//! A [`TraceSample`] is one scored rollout: prompt, reasoning trace, answer,
//! gold answer, per-token policy log-probabilities, per-token prior
//! surprisals over the trace, and an optional reward breakdown. Records are
//! exchanged as one JSON object per line with fixed field names
//! (`id`, `prompt_ids`, `trace_ids`, `answer_ids`, `gold_ids`,
//! `policy_logprobs`, `prior_surprisals`, `r_acc`, `r_min`, `beta`,
//! `reward_total`); decoded text fields are attached alongside the id lists
//! when a vocabulary is available, purely for human auditing.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{TokenSeq, Vocab};

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("record {id}: prior_surprisals has {got} entries, trace has {want} tokens")]
    SurprisalLength { id: u64, got: usize, want: usize },
    #[error("record {id}: negative prior surprisal {value} at index {index}")]
    NegativeSurprisal { id: u64, index: usize, value: f64 },
    #[error("record {id}: policy_logprobs has {got} entries, expected {want} or {}", want + 1)]
    LogprobLength { id: u64, got: usize, want: usize },
    #[error("record {id}: reward_total {total} != r_acc {r_acc} + beta {beta} * r_min {r_min}")]
    RewardIdentity { id: u64, r_acc: f64, r_min: f64, beta: f64, total: f64 },
    #[error("record {id}: reward fields must be all present or all absent")]
    PartialReward { id: u64 },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Additive reward decomposition `total = r_acc + beta * r_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Binary answer accuracy (0 or 1).
    pub r_acc: f64,
    /// Minimality reward: negative trace code length in nats (<= 0).
    pub r_min: f64,
    /// Compression weight applied to `r_min`.
    pub beta: f64,
    /// `r_acc + beta * r_min`, stored exactly as computed.
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(r_acc: f64, r_min: f64, beta: f64) -> Self {
        RewardBreakdown { r_acc, r_min, beta, total: r_acc + beta * r_min }
    }
}

/// One scored rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub id: u64,
    pub prompt: TokenSeq,
    pub trace: TokenSeq,
    pub answer: TokenSeq,
    pub gold: TokenSeq,
    /// log pi(token | prefix) for each trace and answer token, plus a final
    /// entry when generation ended with an emitted EOS.
    pub policy_logprobs: Vec<f64>,
    /// -log Q(z_t | z_<t)) per trace token; empty when the prior used for
    /// scoring is sequence-level only.
    pub prior_surprisals: Vec<f64>,
    pub reward: Option<RewardBreakdown>,
}

impl TraceSample {
    /// Check the structural invariants a well-formed record must satisfy.
    ///
    /// `prior_surprisals` must be per-trace-token (or empty, for
    /// sequence-level priors) and non-negative; `policy_logprobs` covers the
    /// trace and answer tokens with at most one extra EOS entry; when a
    /// reward is present, its total must equal `r_acc + beta * r_min`
    /// exactly as floating-point arithmetic produced it.
    pub fn validate(&self) -> Result<(), SampleError> {
        if !self.prior_surprisals.is_empty() && self.prior_surprisals.len() != self.trace.len() {
            return Err(SampleError::SurprisalLength {
                id: self.id,
                got: self.prior_surprisals.len(),
                want: self.trace.len(),
            });
        }
        for (index, &value) in self.prior_surprisals.iter().enumerate() {
            if !(value >= 0.0) {
                return Err(SampleError::NegativeSurprisal { id: self.id, index, value });
            }
        }
        let want = self.trace.len() + self.answer.len();
        if self.policy_logprobs.len() != want && self.policy_logprobs.len() != want + 1 {
            return Err(SampleError::LogprobLength {
                id: self.id,
                got: self.policy_logprobs.len(),
                want,
            });
        }
        if let Some(r) = &self.reward {
            let expect = r.r_acc + r.beta * r.r_min;
            if r.total != expect && !(r.total.is_nan() && expect.is_nan()) {
                return Err(SampleError::RewardIdentity {
                    id: self.id,
                    r_acc: r.r_acc,
                    r_min: r.r_min,
                    beta: r.beta,
                    total: r.total,
                });
            }
        }
        Ok(())
    }
}

/// Wire format for one JSONL line. Field order is fixed by this struct, so
/// serialization is byte-stable across runs.
#[derive(Debug, Serialize, Deserialize)]
struct TraceRecord {
    id: u64,
    prompt_ids: TokenSeq,
    trace_ids: TokenSeq,
    answer_ids: TokenSeq,
    gold_ids: TokenSeq,
    policy_logprobs: Vec<f64>,
    prior_surprisals: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reward_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    answer_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gold_text: Option<String>,
}

impl TraceRecord {
    fn from_sample(s: &TraceSample, vocab: Option<&Vocab>) -> TraceRecord {
        let text = |ids: &TokenSeq| vocab.and_then(|v| v.decode(ids).ok());
        TraceRecord {
            id: s.id,
            prompt_ids: s.prompt.clone(),
            trace_ids: s.trace.clone(),
            answer_ids: s.answer.clone(),
            gold_ids: s.gold.clone(),
            policy_logprobs: s.policy_logprobs.clone(),
            prior_surprisals: s.prior_surprisals.clone(),
            r_acc: s.reward.map(|r| r.r_acc),
            r_min: s.reward.map(|r| r.r_min),
            beta: s.reward.map(|r| r.beta),
            reward_total: s.reward.map(|r| r.total),
            prompt_text: text(&s.prompt),
            trace_text: text(&s.trace),
            answer_text: text(&s.answer),
            gold_text: text(&s.gold),
        }
    }

    fn into_sample(self, line: usize) -> Result<TraceSample, SampleError> {
        let reward = match (self.r_acc, self.r_min, self.beta, self.reward_total) {
            (Some(r_acc), Some(r_min), Some(beta), Some(total)) => {
                Some(RewardBreakdown { r_acc, r_min, beta, total })
            }
            (None, None, None, None) => None,
            _ => {
                return Err(SampleError::Schema {
                    line,
                    message: format!(
                        "record {}: reward fields must be all present or all absent",
                        self.id
                    ),
                })
            }
        };
        let sample = TraceSample {
            id: self.id,
            prompt: self.prompt_ids,
            trace: self.trace_ids,
            answer: self.answer_ids,
            gold: self.gold_ids,
            policy_logprobs: self.policy_logprobs,
            prior_surprisals: self.prior_surprisals,
            reward,
        };
        sample.validate().map_err(|e| SampleError::Schema { line, message: e.to_string() })?;
        Ok(sample)
    }
}

/// Write samples as JSONL. With a vocabulary, decoded text fields are
/// attached for auditability; ids remain the source of truth.
pub fn write_trace_samples<W: Write>(
    mut out: W,
    samples: &[TraceSample],
    vocab: Option<&Vocab>,
) -> Result<(), SampleError> {
    for s in samples {
        s.validate()?;
        let record = TraceRecord::from_sample(s, vocab);
        let line = serde_json::to_string(&record)
            .map_err(|source| SampleError::Json { line: 0, source })?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Read JSONL trace samples, validating every record. Errors carry the
/// offending 1-based line number.
pub fn read_trace_samples<R: BufRead>(reader: R) -> Result<Vec<TraceSample>, SampleError> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line)
            .map_err(|source| SampleError::Json { line: line_no, source })?;
        samples.push(record.into_sample(line_no)?);
    }
    Ok(samples)
}
