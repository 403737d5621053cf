//! Evaluation, compression metrics, and the beta sweep.
//!
//! [`evaluate`] draws `k` completions per task from any
//! [`CompletionPolicy`] on dedicated per-`(task, draw)` RNG streams (so
//! results never depend on thread scheduling), counts exact-match answers
//! with integer arithmetic, and summarizes trace lengths.
//!
//! On top of evaluation sit the two headline metrics — the compression
//! factor `C_f = 1 - len_target / len_baseline` and the accuracy ratio
//! `A_r = acc_target / acc_baseline` — plus two diagnostic views of where
//! a policy spends its description-length budget: a positional
//! information-density profile and the correlation between trace length
//! and the minimality reward. [`pareto_sweep`] retrains the policy across
//! an ascending grid of compression weights and tabulates the
//! accuracy/length trade-off against the untrained starting point.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::policy::{CompletionPolicy, PolicyConfig, PolicyError};
use crate::prior::{self, PriorError, PriorModel, SharedPrior};
use crate::reward::{RewardError, RewardModel};
use crate::rng::StreamRng;
use crate::sample::TraceSample;
use crate::tasks::TaskInstance;
use crate::trainer::{self, GrpoConfig, TrainError};
use crate::verifier::{check_answer_ids, VerifierConfig};
use crate::vocab::{split_completion_parts, Vocab};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid eval config: {0}")]
    BadConfig(String),
    #[error("cannot evaluate an empty task set")]
    EmptyTaskSet,
    #[error("policy was trained on vocab {policy:#018x}, tasks use {tasks:#018x}")]
    VocabMismatch { policy: u64, tasks: u64 },
    #[error("division by zero: {0}")]
    DivideByZero(&'static str),
    #[error("record {id} carries no per-token surprisals and no prior was supplied")]
    NoSurprisals { id: u64 },
    #[error("prior '{0}' is not per-token; the profile needs token-level surprisals")]
    NotPerToken(String),
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// How to evaluate: draws per task, sampling temperature, budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// Completions per task.
    pub k: usize,
    /// Sampling temperature (0 = greedy).
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k: 16, temperature: 0.6, max_new_tokens: 32, seed: 0, workers: 1 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.k == 0 || self.max_new_tokens == 0 || self.workers == 0 {
            return Err(EvalError::BadConfig(
                "k, max_new_tokens, workers must be positive".into(),
            ));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(EvalError::BadConfig(format!(
                "temperature {} must be finite and >= 0",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// An [`EvalOutcome`] tagged with the identities that produced it, so
/// result files are self-describing.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    /// Where the policy came from (checkpoint path, "initial", ...).
    pub model_id: String,
    /// Where the tasks came from (dataset path or generation spec).
    pub task_set_id: String,
    /// Compression weight the policy was trained with, when known.
    pub beta: Option<f64>,
    /// Identity of the prior used in training, when known.
    pub prior_id: Option<String>,
    pub outcome: EvalOutcome,
}

/// Aggregate results of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub n_tasks: usize,
    pub k: usize,
    /// Exact-match answers over all `n_tasks * k` draws.
    pub total_correct: u64,
    /// `total_correct / (n_tasks * k)`, the mean per-draw success rate.
    pub accuracy: f64,
    pub mean_trace_len: f64,
    pub median_trace_len: f64,
    /// `(trace length, draws)` pairs, ascending by length.
    pub trace_len_histogram: Vec<(usize, u64)>,
    /// Correct draws per task, aligned with the input task order.
    pub per_task_correct: Vec<u64>,
}

/// Draw `k` completions per task and score exact-match accuracy.
///
/// Every `(task, draw)` slot samples from its own RNG stream, so the
/// outcome is identical for any worker count; accuracy is accumulated in
/// integers, so it is invariant to aggregation order.
pub fn evaluate(
    policy: &dyn CompletionPolicy,
    tasks: &[TaskInstance],
    vocab: &Vocab,
    cfg: &EvalConfig,
) -> Result<EvalOutcome, EvalError> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(EvalError::EmptyTaskSet);
    }
    if policy.vocab_hash() != vocab.hash() {
        return Err(EvalError::VocabMismatch { policy: policy.vocab_hash(), tasks: vocab.hash() });
    }
    let root = StreamRng::from_seed(cfg.seed).split_str("eval");
    let slots: Vec<(usize, usize)> =
        (0..tasks.len()).flat_map(|t| (0..cfg.k).map(move |j| (t, j))).collect();
    let mut results: Vec<Option<Result<(bool, usize), EvalError>>> =
        (0..slots.len()).map(|_| None).collect();
    let chunk = slots.len().div_ceil(cfg.workers);
    std::thread::scope(|scope| {
        for (slot_chunk, out_chunk) in slots.chunks(chunk).zip(results.chunks_mut(chunk)) {
            let root = &root;
            scope.spawn(move || {
                for (&(t, j), out) in slot_chunk.iter().zip(out_chunk.iter_mut()) {
                    let task = &tasks[t];
                    let mut rng = root.split(t as u64).split(j as u64);
                    let drawn = policy
                        .sample(
                            &task.prompt,
                            cfg.temperature,
                            cfg.max_new_tokens,
                            vocab.eos_id(),
                            &mut rng,
                        )
                        .map(|completion| {
                            let parts = split_completion_parts(vocab, &completion.tokens);
                            (check_answer_ids(&task.gold, &parts.answer), parts.trace.len())
                        })
                        .map_err(EvalError::Policy);
                    *out = Some(drawn);
                }
            });
        }
    });

    let mut per_task_correct = vec![0u64; tasks.len()];
    let mut lens: Vec<usize> = Vec::with_capacity(slots.len());
    let mut histogram: BTreeMap<usize, u64> = BTreeMap::new();
    for (&(t, _), result) in slots.iter().zip(results) {
        let (correct, len) = result.expect("every slot filled")?;
        if correct {
            per_task_correct[t] += 1;
        }
        lens.push(len);
        *histogram.entry(len).or_insert(0) += 1;
    }
    let total_correct: u64 = per_task_correct.iter().sum();
    let draws = (tasks.len() * cfg.k) as f64;
    let mean = lens.iter().sum::<usize>() as f64 / draws;
    lens.sort_unstable();
    let median = if lens.len() % 2 == 1 {
        lens[lens.len() / 2] as f64
    } else {
        (lens[lens.len() / 2 - 1] + lens[lens.len() / 2]) as f64 / 2.0
    };
    Ok(EvalOutcome {
        n_tasks: tasks.len(),
        k: cfg.k,
        total_correct,
        accuracy: total_correct as f64 / draws,
        mean_trace_len: mean,
        median_trace_len: median,
        trace_len_histogram: histogram.into_iter().collect(),
        per_task_correct,
    })
}

/// Compression factor `C_f = 1 - len_target / len_baseline`: the fraction
/// of the baseline's trace budget that the target model saves.
pub fn compression_factor(baseline_mean_len: f64, target_mean_len: f64) -> Result<f64, EvalError> {
    if baseline_mean_len == 0.0 {
        return Err(EvalError::DivideByZero("baseline mean trace length"));
    }
    Ok(1.0 - target_mean_len / baseline_mean_len)
}

/// Accuracy ratio `A_r = acc_target / acc_baseline`: retained accuracy.
pub fn accuracy_ratio(baseline_accuracy: f64, target_accuracy: f64) -> Result<f64, EvalError> {
    if baseline_accuracy == 0.0 {
        return Err(EvalError::DivideByZero("baseline accuracy"));
    }
    Ok(target_accuracy / baseline_accuracy)
}

/// One bin of the positional information-density profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileBin {
    /// Bin center in relative trace position, in `(0, 1)`.
    pub position: f64,
    /// Mean per-token surprisal (nats) of tokens falling in the bin.
    pub mean_surprisal: f64,
    /// Population standard deviation of the bin's surprisals (nats).
    pub std_surprisal: f64,
    /// Tokens aggregated into the bin.
    pub count: u64,
}

/// Average per-token surprisal as a function of relative position
/// `(t + 0.5) / T` within each trace, across `bins` equal-width bins.
///
/// Surprisals come from `prior` when given (it must be a per-token
/// model), otherwise from the per-token surprisals stored on each record.
/// An empty sample set yields an empty profile.
pub fn info_density_profile(
    samples: &[TraceSample],
    prior: Option<&dyn PriorModel>,
    bins: usize,
) -> Result<Vec<ProfileBin>, EvalError> {
    if bins == 0 {
        return Err(EvalError::BadConfig("profile needs at least one bin".into()));
    }
    if let Some(p) = prior {
        if !p.is_per_token() {
            return Err(EvalError::NotPerToken(p.id()));
        }
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let mut sums = vec![0.0; bins];
    let mut sq_sums = vec![0.0; bins];
    let mut counts = vec![0u64; bins];
    for sample in samples {
        let surprisals = match prior {
            Some(p) => prior::surprisal_stream(p, &sample.trace)?,
            None => {
                if sample.prior_surprisals.is_empty() && !sample.trace.is_empty() {
                    return Err(EvalError::NoSurprisals { id: sample.id });
                }
                sample.prior_surprisals.clone()
            }
        };
        let t_len = surprisals.len();
        for (t, &s) in surprisals.iter().enumerate() {
            let rel = (t as f64 + 0.5) / t_len as f64;
            let bin = ((rel * bins as f64) as usize).min(bins - 1);
            sums[bin] += s;
            sq_sums[bin] += s * s;
            counts[bin] += 1;
        }
    }
    Ok((0..bins)
        .map(|b| {
            let (mean, std) = if counts[b] == 0 {
                (0.0, 0.0)
            } else {
                let n = counts[b] as f64;
                let mean = sums[b] / n;
                (mean, (sq_sums[b] / n - mean * mean).max(0.0).sqrt())
            };
            ProfileBin {
                position: (b as f64 + 0.5) / bins as f64,
                mean_surprisal: mean,
                std_surprisal: std,
                count: counts[b],
            }
        })
        .collect())
}

/// Mean and spread of the minimality reward in one length range.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthBin {
    pub min_len: usize,
    pub max_len: usize,
    pub mean_r_min: f64,
    /// Population standard deviation inside the bin (the +-1 sigma band).
    pub std_r_min: f64,
    pub count: u64,
}

/// Correlation between trace length and the minimality reward.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    /// Pearson correlation of `(trace length, r_min)` pairs. Strongly
    /// negative means longer traces pay proportionally more.
    pub pearson_r: f64,
    pub n: usize,
    /// Quantile length bins with their mean minimality rewards.
    pub bins: Vec<LengthBin>,
}

/// Pearson correlation between trace length and `r_min = ln Q(z)`, with
/// mean +- 1 sigma rewards across `bins` quantile length bins (deciles at
/// the default `bins = 10`; fewer when there are fewer samples).
///
/// Rewards come from `prior` when given, otherwise from the per-token
/// surprisals stored on each record.
pub fn minimality_length_correlation(
    samples: &[TraceSample],
    prior: Option<&dyn PriorModel>,
    bins: usize,
) -> Result<CorrelationReport, EvalError> {
    if bins == 0 {
        return Err(EvalError::BadConfig("correlation needs at least one length bin".into()));
    }
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(samples.len());
    for sample in samples {
        let r_min = match prior {
            Some(p) => prior::minimality_reward(p, &sample.trace)?,
            None => {
                if sample.prior_surprisals.is_empty() && !sample.trace.is_empty() {
                    return Err(EvalError::NoSurprisals { id: sample.id });
                }
                -sample.prior_surprisals.iter().sum::<f64>()
            }
        };
        pairs.push((sample.trace.len() as f64, r_min));
    }
    if pairs.len() < 3 {
        return Err(EvalError::DegenerateSample(format!(
            "{} samples; correlation needs at least 3",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in &pairs {
        sxx += (x - mean_x) * (x - mean_x);
        syy += (y - mean_y) * (y - mean_y);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(EvalError::DegenerateSample("all traces have the same length".into()));
    }
    if syy == 0.0 {
        return Err(EvalError::DegenerateSample("all minimality rewards are equal".into()));
    }
    // Exactly collinear pairs can land an ulp outside [-1, 1].
    let pearson_r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);

    // Quantile bins over length.
    let mut sorted = pairs.clone();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let n_bins = bins.min(sorted.len());
    let per = sorted.len().div_ceil(n_bins);
    let bins = sorted
        .chunks(per)
        .map(|chunk| {
            let count = chunk.len() as f64;
            let mean = chunk.iter().map(|p| p.1).sum::<f64>() / count;
            let var = chunk.iter().map(|p| (p.1 - mean) * (p.1 - mean)).sum::<f64>() / count;
            LengthBin {
                min_len: chunk.first().unwrap().0 as usize,
                max_len: chunk.last().unwrap().0 as usize,
                mean_r_min: mean,
                std_r_min: var.sqrt(),
                count: chunk.len() as u64,
            }
        })
        .collect();
    Ok(CorrelationReport { pearson_r, n: pairs.len(), bins })
}

/// One compression weight's results within a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    /// False when training failed (e.g. every group filtered).
    pub trained: bool,
    pub accuracy: f64,
    pub mean_trace_len: f64,
    pub median_trace_len: f64,
    /// `C_f` against the untrained baseline.
    pub compression: f64,
    /// `A_r` against the untrained baseline (NaN if undefined).
    pub accuracy_ratio: f64,
    pub error: Option<String>,
}

/// A full sweep: the untrained baseline plus one row per beta.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub baseline_accuracy: f64,
    pub baseline_mean_trace_len: f64,
    pub baseline_median_trace_len: f64,
    pub rows: Vec<SweepRow>,
}

/// Published reference weights bracketing the accuracy-preserving
/// (`minus`) and compression-leaning (`plus`) operating points; recorded
/// in sweep output headers for comparison against desk-scale grids.
pub const REFERENCE_BETA_MINUS: f64 = 5e-5;
pub const REFERENCE_BETA_PLUS: f64 = 1.5e-4;

/// Train one policy per `beta` (ascending, non-negative grid) and
/// evaluate each against the shared eval task set. The baseline row
/// evaluates the untrained initial policy, which anchors every row's
/// compression factor and accuracy ratio.
#[allow(clippy::too_many_arguments)]
pub fn pareto_sweep(
    betas: &[f64],
    train_cfg: &GrpoConfig,
    policy_cfg: &PolicyConfig,
    train_tasks: &[TaskInstance],
    eval_tasks: &[TaskInstance],
    vocab: &Vocab,
    prior: SharedPrior,
    verifier: VerifierConfig,
    eval_cfg: &EvalConfig,
) -> Result<SweepOutcome, EvalError> {
    if betas.is_empty() {
        return Err(EvalError::BadConfig("sweep needs at least one beta".into()));
    }
    for pair in betas.windows(2) {
        if !(pair[1] > pair[0]) {
            return Err(EvalError::BadConfig(format!(
                "betas must be strictly ascending, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    if !(betas[0] >= 0.0) {
        return Err(EvalError::BadConfig(format!("betas must be non-negative, got {}", betas[0])));
    }

    let initial = crate::policy::PolicyCheckpoint {
        params: trainer::initial_params(train_cfg, policy_cfg)?,
        vocab_hash: vocab.hash(),
        step: 0,
        rng_state: StreamRng::from_seed(train_cfg.seed).state(),
    };
    let baseline = evaluate(&initial, eval_tasks, vocab, eval_cfg)?;

    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let reward = RewardModel::new(prior.clone(), beta, verifier)?;
        match trainer::train(train_cfg, policy_cfg, train_tasks, vocab, &reward, |_| Ok(())) {
            Ok(result) => {
                let outcome = evaluate(&result.checkpoint, eval_tasks, vocab, eval_cfg)?;
                let compression =
                    compression_factor(baseline.mean_trace_len, outcome.mean_trace_len)
                        .unwrap_or(f64::NAN);
                let ratio = accuracy_ratio(baseline.accuracy, outcome.accuracy)
                    .unwrap_or(f64::NAN);
                rows.push(SweepRow {
                    beta,
                    trained: true,
                    accuracy: outcome.accuracy,
                    mean_trace_len: outcome.mean_trace_len,
                    median_trace_len: outcome.median_trace_len,
                    compression,
                    accuracy_ratio: ratio,
                    error: None,
                });
            }
            Err(TrainError::AllFiltered) => rows.push(SweepRow {
                beta,
                trained: false,
                accuracy: f64::NAN,
                mean_trace_len: f64::NAN,
                median_trace_len: f64::NAN,
                compression: f64::NAN,
                accuracy_ratio: f64::NAN,
                error: Some("all rollout groups had zero reward variance".into()),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(SweepOutcome {
        baseline_accuracy: baseline.accuracy,
        baseline_mean_trace_len: baseline.mean_trace_len,
        baseline_median_trace_len: baseline.median_trace_len,
        rows,
    })
}

/// Serialize a sweep as CSV, with the published reference weights and the
/// untrained baseline recorded as `#` header comments.
pub fn write_sweep_csv(path: &Path, outcome: &SweepOutcome) -> Result<(), EvalError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# reference_beta_minus={REFERENCE_BETA_MINUS}")?;
    writeln!(out, "# reference_beta_plus={REFERENCE_BETA_PLUS}")?;
    writeln!(
        out,
        "# baseline accuracy={} mean_trace_len={} median_trace_len={}",
        outcome.baseline_accuracy,
        outcome.baseline_mean_trace_len,
        outcome.baseline_median_trace_len
    )?;
    writeln!(
        out,
        "beta,trained,accuracy,mean_trace_len,median_trace_len,compression,accuracy_ratio,error"
    )?;
    for row in &outcome.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.beta,
            row.trained,
            row.accuracy,
            row.mean_trace_len,
            row.median_trace_len,
            row.compression,
            row.accuracy_ratio,
            row.error.as_deref().map(|e| e.replace(',', ";")).unwrap_or_default()
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Serialize an evaluation as CSV: identity metadata as `#` comments, one
/// aggregate row, then the trace-length histogram.
pub fn write_eval_csv(path: &Path, record: &EvalRecord) -> Result<(), EvalError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# model_id={}", record.model_id)?;
    writeln!(out, "# task_set_id={}", record.task_set_id)?;
    match record.beta {
        Some(b) => writeln!(out, "# beta={b}")?,
        None => writeln!(out, "# beta=-")?,
    }
    writeln!(out, "# prior_id={}", record.prior_id.as_deref().unwrap_or("-"))?;
    writeln!(out, "n_tasks,k,total_correct,accuracy,mean_trace_len,median_trace_len")?;
    let o = &record.outcome;
    writeln!(
        out,
        "{},{},{},{},{},{}",
        o.n_tasks, o.k, o.total_correct, o.accuracy, o.mean_trace_len, o.median_trace_len
    )?;
    writeln!(out, "trace_len,draws")?;
    for &(len, draws) in &o.trace_len_histogram {
        writeln!(out, "{len},{draws}")?;
    }
    out.flush()?;
    Ok(())
}

/// Serialize an information-density profile as CSV (header always
/// present; rows only when there were samples).
pub fn write_profile_csv(path: &Path, profile: &[ProfileBin]) -> Result<(), EvalError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "position,mean_surprisal,std_surprisal,count")?;
    for bin in profile {
        writeln!(out, "{},{},{},{}", bin.position, bin.mean_surprisal, bin.std_surprisal, bin.count)?;
    }
    out.flush()?;
    Ok(())
}

/// Serialize a length/minimality correlation report as CSV: the Pearson
/// coefficient as a `#` comment, then one row per length bin.
pub fn write_correlation_csv(path: &Path, report: &CorrelationReport) -> Result<(), EvalError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# pearson_r={} n={}", report.pearson_r, report.n)?;
    writeln!(out, "min_len,max_len,mean_r_min,std_r_min,count")?;
    for bin in &report.bins {
        writeln!(
            out,
            "{},{},{},{},{}",
            bin.min_len, bin.max_len, bin.mean_r_min, bin.std_r_min, bin.count
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Completion;
    use crate::prior::{NGramPrior, UniformPrior};
    use crate::tasks::{generate, TaskDatasetSpec, TaskFamily};
    use crate::vocab::{TokenId, TokenSeq};

    /// Scripted stand-in: answers every prompt with a fixed trace and the
    /// gold answer for tasks it "knows"; otherwise emits a wrong digit.
    struct Scripted {
        vocab_hash: u64,
        trace: TokenSeq,
        known: Box<dyn Fn(&[TokenId]) -> Option<TokenSeq> + Sync>,
    }

    impl CompletionPolicy for Scripted {
        fn vocab_hash(&self) -> u64 {
            self.vocab_hash
        }

        fn sample(
            &self,
            prompt: &[TokenId],
            _temperature: f64,
            _max_new_tokens: usize,
            eos_id: TokenId,
            _rng: &mut StreamRng,
        ) -> Result<Completion, PolicyError> {
            let vocab = Vocab::arithmetic();
            let answer = (self.known)(prompt).unwrap_or_else(|| vec![3]);
            let mut tokens = self.trace.clone();
            tokens.push(vocab.answer_delim_id());
            tokens.extend_from_slice(&answer);
            tokens.push(eos_id);
            let logprobs = vec![-0.1; tokens.len()];
            Ok(Completion { tokens, logprobs })
        }
    }

    fn eval_tasks(count: usize) -> (Vec<TaskInstance>, Vocab) {
        let vocab = Vocab::arithmetic();
        let spec = TaskDatasetSpec {
            families: vec![TaskFamily::ModChain],
            difficulty_min: 2,
            difficulty_max: 3,
            count,
            seed: 9,
        };
        let tasks = generate(&spec, &vocab).unwrap();
        (tasks, vocab)
    }

    #[test]
    fn perfect_scripted_policy_scores_one() {
        let (tasks, vocab) = eval_tasks(5);
        let golds: Vec<(TokenSeq, TokenSeq)> =
            tasks.iter().map(|t| (t.prompt.clone(), t.gold.clone())).collect();
        let policy = Scripted {
            vocab_hash: vocab.hash(),
            trace: vec![5, 6],
            known: Box::new(move |prompt| {
                golds.iter().find(|(p, _)| p == prompt).map(|(_, g)| g.clone())
            }),
        };
        let cfg = EvalConfig { k: 4, ..EvalConfig::default() };
        let out = evaluate(&policy, &tasks, &vocab, &cfg).unwrap();
        assert_eq!(out.total_correct, 20);
        assert_eq!(out.accuracy, 1.0);
        assert_eq!(out.mean_trace_len, 2.0);
        assert_eq!(out.median_trace_len, 2.0);
        assert_eq!(out.trace_len_histogram, vec![(2, 20)]);
        assert_eq!(out.per_task_correct, vec![4; 5]);
    }

    #[test]
    fn never_answering_policy_scores_zero() {
        let (tasks, vocab) = eval_tasks(3);
        // Emits a trace with no delimiter at all: the answer span is empty
        // and empty answers never match.
        struct Mute(u64);
        impl CompletionPolicy for Mute {
            fn vocab_hash(&self) -> u64 {
                self.0
            }
            fn sample(
                &self,
                _prompt: &[TokenId],
                _temperature: f64,
                _max_new_tokens: usize,
                _eos_id: TokenId,
                _rng: &mut StreamRng,
            ) -> Result<Completion, PolicyError> {
                Ok(Completion { tokens: vec![5, 5, 5], logprobs: vec![-0.2; 3] })
            }
        }
        let out =
            evaluate(&Mute(vocab.hash()), &tasks, &vocab, &EvalConfig::default()).unwrap();
        assert_eq!(out.total_correct, 0);
        assert_eq!(out.accuracy, 0.0);
        assert_eq!(out.mean_trace_len, 3.0);
    }

    #[test]
    fn evaluation_rejects_mismatched_vocabs_and_empty_sets() {
        let (tasks, vocab) = eval_tasks(2);
        let policy =
            Scripted { vocab_hash: 1, trace: vec![], known: Box::new(|_| None) };
        assert!(matches!(
            evaluate(&policy, &tasks, &vocab, &EvalConfig::default()),
            Err(EvalError::VocabMismatch { .. })
        ));
        let ok = Scripted { vocab_hash: vocab.hash(), trace: vec![], known: Box::new(|_| None) };
        assert!(matches!(
            evaluate(&ok, &[], &vocab, &EvalConfig::default()),
            Err(EvalError::EmptyTaskSet)
        ));
    }

    #[test]
    fn accuracy_is_integer_exact_and_worker_independent() {
        let (tasks, vocab) = eval_tasks(4);
        let golds: Vec<(TokenSeq, TokenSeq)> =
            tasks.iter().map(|t| (t.prompt.clone(), t.gold.clone())).collect();
        // Knows only half the tasks.
        let known = move |prompt: &[TokenId]| {
            golds
                .iter()
                .enumerate()
                .find(|(_, (p, _))| p == prompt)
                .and_then(|(i, (_, g))| if i % 2 == 0 { Some(g.clone()) } else { None })
        };
        let mut outcomes = Vec::new();
        for workers in [1, 2, 5] {
            let policy = Scripted {
                vocab_hash: vocab.hash(),
                trace: vec![4, 4, 4],
                known: Box::new(known.clone()),
            };
            let cfg = EvalConfig { k: 3, workers, ..EvalConfig::default() };
            outcomes.push(evaluate(&policy, &tasks, &vocab, &cfg).unwrap());
        }
        assert_eq!(outcomes[0], outcomes[1]);
        assert_eq!(outcomes[0], outcomes[2]);
        assert_eq!(outcomes[0].total_correct, 6); // 2 known tasks * 3 draws
        assert_eq!(outcomes[0].accuracy, 6.0 / 12.0);
    }

    #[test]
    fn headline_metrics_match_published_anchors() {
        // Published average-token and accuracy columns: the strongest
        // compression run cuts mean completion tokens from 6722 to 3951
        // while accuracy moves from 44.7 to 44.0.
        let c_f = compression_factor(6722.0, 3951.0).unwrap();
        assert_eq!(c_f, 0.41222850342160067);
        assert!((0.410..=0.414).contains(&c_f));
        let a_r = accuracy_ratio(44.7, 44.0).unwrap();
        assert_eq!(a_r, 0.9843400447427293);
        assert!((0.983..=0.986).contains(&a_r));
        assert!(matches!(
            compression_factor(0.0, 1.0),
            Err(EvalError::DivideByZero("baseline mean trace length"))
        ));
        assert!(matches!(accuracy_ratio(0.0, 1.0), Err(EvalError::DivideByZero(_))));
    }

    fn sample_with_trace(id: u64, trace: TokenSeq, surprisals: Vec<f64>) -> TraceSample {
        TraceSample {
            id,
            prompt: vec![0],
            trace,
            answer: vec![4],
            gold: vec![4],
            policy_logprobs: Vec::new(),
            prior_surprisals: surprisals,
            reward: None,
        }
    }

    #[test]
    fn profile_bins_partition_all_tokens() {
        let prior = UniformPrior::new(17);
        let samples = vec![
            sample_with_trace(0, vec![5, 6, 7, 8, 9], vec![]),
            sample_with_trace(1, vec![5, 6, 7], vec![]),
            sample_with_trace(2, vec![], vec![]),
        ];
        let profile = info_density_profile(&samples, Some(&prior), 4).unwrap();
        assert_eq!(profile.len(), 4);
        let total: u64 = profile.iter().map(|b| b.count).sum();
        assert_eq!(total, 8, "every token lands in exactly one bin");
        // Uniform prior: every token costs ln 17 regardless of position,
        // so every occupied bin is flat with zero spread.
        for bin in &profile {
            if bin.count > 0 {
                assert!((bin.mean_surprisal - 17.0_f64.ln()).abs() < 1e-12);
                assert!(bin.std_surprisal < 1e-9);
            }
            assert!(bin.position > 0.0 && bin.position < 1.0);
        }
        // Bin centers are evenly spaced.
        assert_eq!(profile[0].position, 0.125);
        assert_eq!(profile[3].position, 0.875);
    }

    #[test]
    fn profile_requires_a_per_token_prior_and_tolerates_empty_input() {
        let laplace = crate::prior::LaplaceLengthPrior::new(5, 1.0).unwrap();
        let samples = vec![sample_with_trace(0, vec![5, 6], vec![])];
        assert!(matches!(
            info_density_profile(&samples, Some(&laplace), 4),
            Err(EvalError::NotPerToken(_))
        ));
        let uniform = UniformPrior::new(17);
        assert_eq!(info_density_profile(&[], Some(&uniform), 4).unwrap(), vec![]);
    }

    #[test]
    fn repeated_suffixes_are_cheap_at_the_end_of_the_profile() {
        // Every trace ends in the same run of '+' tokens; a bigram fitted
        // on the corpus finds the suffix predictable, so the profile falls
        // from the (varied) head to the (repetitive) tail.
        let vocab = Vocab::arithmetic();
        let mut rng = StreamRng::from_seed(23);
        let samples: Vec<TraceSample> = (0..50)
            .map(|i| {
                let mut trace: TokenSeq =
                    (0..4).map(|_| 3 + rng.next_usize(10) as TokenId).collect();
                trace.extend_from_slice(&[13; 6]);
                sample_with_trace(i, trace, vec![])
            })
            .collect();
        let corpus: Vec<TokenSeq> = samples.iter().map(|s| s.trace.clone()).collect();
        let prior = NGramPrior::fit(&corpus, 2, 0.5, &vocab).unwrap();
        let profile = info_density_profile(&samples, Some(&prior), 5).unwrap();
        assert!(
            profile.last().unwrap().mean_surprisal < profile.first().unwrap().mean_surprisal,
            "repetition should be predictable: head {} vs tail {}",
            profile.first().unwrap().mean_surprisal,
            profile.last().unwrap().mean_surprisal
        );
    }

    #[test]
    fn profile_uses_stored_surprisals_when_no_prior_given() {
        let samples = vec![sample_with_trace(7, vec![5, 6], vec![1.0, 3.0])];
        let profile = info_density_profile(&samples, None, 2).unwrap();
        assert_eq!(profile[0].mean_surprisal, 1.0);
        assert_eq!(profile[1].mean_surprisal, 3.0);
        let missing = vec![sample_with_trace(8, vec![5, 6], vec![])];
        assert!(matches!(
            info_density_profile(&missing, None, 2),
            Err(EvalError::NoSurprisals { id: 8 })
        ));
    }

    #[test]
    fn uniform_prior_correlation_is_exactly_minus_one() {
        let prior = UniformPrior::new(17);
        let samples: Vec<TraceSample> = (0..10)
            .map(|i| sample_with_trace(i, vec![5; (i as usize % 5) + 1], vec![]))
            .collect();
        let report = minimality_length_correlation(&samples, Some(&prior), 10).unwrap();
        assert!(
            (report.pearson_r + 1.0).abs() < 1e-12,
            "uniform cost is exactly linear in length: r = {}",
            report.pearson_r
        );
        assert_eq!(report.n, 10);
        assert!(!report.bins.is_empty());
        let total: u64 = report.bins.iter().map(|b| b.count).sum();
        assert_eq!(total, 10);
        // Bin mean rewards fall as lengths grow.
        for pair in report.bins.windows(2) {
            assert!(pair[0].mean_r_min >= pair[1].mean_r_min);
            assert!(pair[0].max_len <= pair[1].min_len);
        }
    }

    #[test]
    fn fitted_prior_correlation_is_strongly_negative() {
        let vocab = Vocab::arithmetic();
        let corpus: Vec<TokenSeq> =
            (0..40).map(|i| vec![3 + (i % 10) as TokenId; 3 + (i as usize % 4)]).collect();
        let prior = NGramPrior::fit(&corpus, 2, 0.5, &vocab).unwrap();
        let mut rng = StreamRng::from_seed(17);
        let samples: Vec<TraceSample> = (0..60)
            .map(|i| {
                let len = 1 + rng.next_usize(12);
                let trace: TokenSeq =
                    (0..len).map(|_| 3 + rng.next_usize(10) as TokenId).collect();
                sample_with_trace(i, trace, vec![])
            })
            .collect();
        let report = minimality_length_correlation(&samples, Some(&prior), 10).unwrap();
        assert!(
            report.pearson_r <= -0.5,
            "longer traces should cost more under a fitted prior: r = {}",
            report.pearson_r
        );

        // Cross-check against an algebraically different correlation
        // formula computed from raw sums.
        let xs: Vec<f64> = samples.iter().map(|s| s.trace.len() as f64).collect();
        let ys: Vec<f64> = samples
            .iter()
            .map(|s| crate::prior::minimality_reward(&prior, &s.trace).unwrap())
            .collect();
        let n = xs.len() as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let syy: f64 = ys.iter().map(|y| y * y).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let reference =
            (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        assert!(
            (report.pearson_r - reference).abs() < 1e-12,
            "{} vs raw-sums value {}",
            report.pearson_r,
            reference
        );
    }

    #[test]
    fn correlation_requires_varied_lengths() {
        let prior = UniformPrior::new(17);
        let two = vec![
            sample_with_trace(0, vec![5], vec![]),
            sample_with_trace(1, vec![5, 6], vec![]),
        ];
        assert!(matches!(
            minimality_length_correlation(&two, Some(&prior), 10),
            Err(EvalError::DegenerateSample(_))
        ));
        let same: Vec<TraceSample> =
            (0..5).map(|i| sample_with_trace(i, vec![5, 6], vec![])).collect();
        assert!(matches!(
            minimality_length_correlation(&same, Some(&prior), 10),
            Err(EvalError::DegenerateSample(_))
        ));
        let varied: Vec<TraceSample> =
            (0..5).map(|i| sample_with_trace(i, vec![5; i as usize + 1], vec![])).collect();
        assert!(matches!(
            minimality_length_correlation(&varied, Some(&prior), 0),
            Err(EvalError::BadConfig(_))
        ));
    }

    #[test]
    fn repeated_sampling_estimates_agree_with_the_long_run_rate() {
        // A coin-flip policy answers correctly with probability 1/2; the
        // k=16 estimate must sit within binomial 3 sigma of that rate.
        let (tasks, vocab) = eval_tasks(25);
        let golds: Vec<(TokenSeq, TokenSeq)> =
            tasks.iter().map(|t| (t.prompt.clone(), t.gold.clone())).collect();
        struct CoinFlip {
            vocab_hash: u64,
            golds: Vec<(TokenSeq, TokenSeq)>,
        }
        impl CompletionPolicy for CoinFlip {
            fn vocab_hash(&self) -> u64 {
                self.vocab_hash
            }
            fn sample(
                &self,
                prompt: &[TokenId],
                _temperature: f64,
                _max_new_tokens: usize,
                eos_id: TokenId,
                rng: &mut StreamRng,
            ) -> Result<Completion, PolicyError> {
                let vocab = Vocab::arithmetic();
                let gold = self
                    .golds
                    .iter()
                    .find(|(p, _)| p == prompt)
                    .map(|(_, g)| g.clone())
                    .unwrap();
                let answer = if rng.next_f64() < 0.5 { gold } else { vec![3, 3, 3] };
                let mut tokens = vec![5, vocab.answer_delim_id()];
                tokens.extend_from_slice(&answer);
                tokens.push(eos_id);
                let logprobs = vec![-0.1; tokens.len()];
                Ok(Completion { tokens, logprobs })
            }
        }
        let policy = CoinFlip { vocab_hash: vocab.hash(), golds };
        let k16 = EvalConfig { k: 16, seed: 3, ..EvalConfig::default() };
        let out = evaluate(&policy, &tasks, &vocab, &k16).unwrap();
        let draws = (tasks.len() * 16) as f64;
        let three_sigma = 3.0 * (0.25 / draws).sqrt();
        assert!(
            (out.accuracy - 0.5).abs() <= three_sigma,
            "k=16 accuracy {} strays from 0.5 by more than {three_sigma}",
            out.accuracy
        );
    }

    #[test]
    fn sweep_csv_records_reference_weights_and_rows() {
        let outcome = SweepOutcome {
            baseline_accuracy: 0.5,
            baseline_mean_trace_len: 8.0,
            baseline_median_trace_len: 8.0,
            rows: vec![
                SweepRow {
                    beta: 0.0,
                    trained: true,
                    accuracy: 0.5,
                    mean_trace_len: 8.0,
                    median_trace_len: 8.0,
                    compression: 0.0,
                    accuracy_ratio: 1.0,
                    error: None,
                },
                SweepRow {
                    beta: 0.01,
                    trained: false,
                    accuracy: f64::NAN,
                    mean_trace_len: f64::NAN,
                    median_trace_len: f64::NAN,
                    compression: f64::NAN,
                    accuracy_ratio: f64::NAN,
                    error: Some("all rollout groups had zero reward variance".into()),
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&path, &outcome).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# reference_beta_minus=0.00005");
        assert_eq!(lines[1], "# reference_beta_plus=0.00015");
        assert!(lines[2].starts_with("# baseline accuracy=0.5"));
        assert_eq!(
            lines[3],
            "beta,trained,accuracy,mean_trace_len,median_trace_len,compression,accuracy_ratio,error"
        );
        assert!(lines[4].starts_with("0,true,0.5,8,8,0,1,"));
        assert!(lines[5].starts_with("0.01,false,NaN,"));
        assert!(lines[5].ends_with("zero reward variance"));
    }

    #[test]
    fn eval_profile_and_correlation_csvs_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let record = EvalRecord {
            model_id: "ckpt_final.bin".into(),
            task_set_id: "tasks.jsonl".into(),
            beta: Some(0.005),
            prior_id: None,
            outcome: EvalOutcome {
                n_tasks: 2,
                k: 3,
                total_correct: 4,
                accuracy: 4.0 / 6.0,
                mean_trace_len: 2.5,
                median_trace_len: 2.0,
                trace_len_histogram: vec![(2, 4), (4, 2)],
                per_task_correct: vec![3, 1],
            },
        };
        let eval_path = dir.path().join("eval.csv");
        write_eval_csv(&eval_path, &record).unwrap();
        let text = std::fs::read_to_string(&eval_path).unwrap();
        assert_eq!(
            text,
            "# model_id=ckpt_final.bin\n# task_set_id=tasks.jsonl\n# beta=0.005\n\
             # prior_id=-\nn_tasks,k,total_correct,accuracy,mean_trace_len,median_trace_len\n\
             2,3,4,0.6666666666666666,2.5,2\ntrace_len,draws\n2,4\n4,2\n"
        );

        let profile_path = dir.path().join("profile.csv");
        write_profile_csv(&profile_path, &[]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&profile_path).unwrap(),
            "position,mean_surprisal,std_surprisal,count\n",
            "empty profiles still get the documented header"
        );
        let bin = ProfileBin { position: 0.25, mean_surprisal: 2.833, std_surprisal: 0.0, count: 9 };
        write_profile_csv(&profile_path, &[bin]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&profile_path).unwrap(),
            "position,mean_surprisal,std_surprisal,count\n0.25,2.833,0,9\n"
        );

        let corr_path = dir.path().join("correlation.csv");
        let report = CorrelationReport {
            pearson_r: -1.0,
            n: 10,
            bins: vec![LengthBin { min_len: 1, max_len: 3, mean_r_min: -5.7, std_r_min: 1.5, count: 10 }],
        };
        write_correlation_csv(&corr_path, &report).unwrap();
        assert_eq!(
            std::fs::read_to_string(&corr_path).unwrap(),
            "# pearson_r=-1 n=10\nmin_len,max_len,mean_r_min,std_r_min,count\n1,3,-5.7,1.5,10\n"
        );
    }

    #[test]
    fn sweep_validates_its_beta_grid() {
        let (tasks, vocab) = eval_tasks(2);
        let grids: [&[f64]; 3] = [&[], &[0.2, 0.1], &[-0.1, 0.2]];
        for betas in grids {
            let err = pareto_sweep(
                betas,
                &GrpoConfig::default(),
                &PolicyConfig::for_vocab(vocab.size()),
                &tasks,
                &tasks,
                &vocab,
                std::sync::Arc::new(UniformPrior::new(vocab.size())),
                VerifierConfig::default(),
                &EvalConfig::default(),
            );
            assert!(matches!(err, Err(EvalError::BadConfig(_))), "grid {betas:?}");
        }
    }
}
