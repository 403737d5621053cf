//! Group-relative policy-gradient training.
//!
//! Each step samples a small batch of prompts; for every prompt the current
//! policy draws a group of completions, each scored by the reward model.
//! Advantages are computed *within* a group — rewards are shifted by the
//! group minimum, centered, and divided by the population standard
//! deviation (plus a small epsilon) — so any constant offset common to a
//! group cancels exactly. Groups whose rewards are all identical carry no
//! learning signal and are filtered out of the update.
//!
//! The update ascends a clipped-ratio surrogate (the probability ratio is
//! identically 1 when each batch is used once, making the step an exact
//! REINFORCE step with group baselines), plus an entropy bonus and minus an
//! exact per-position KL penalty against the frozen reference policy from
//! the start of training. Gradients are globally norm-clipped and applied
//! with Adam under a short linear warmup.
//!
//! Determinism: every completion is drawn from its own counter-based RNG
//! stream keyed by `(step, prompt-slot, group-member)`, so rollouts do not
//! depend on how work is spread across threads. For a fixed worker count
//! the whole run — metrics and checkpoints — is bit-reproducible.

use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::policy::{
    self, PolicyCheckpoint, PolicyConfig, PolicyError, PolicyParams,
};
use crate::reward::{RewardError, RewardModel};
use crate::rng::StreamRng;
use crate::sample::{RewardBreakdown, SampleError, TraceSample};
use crate::tasks::TaskInstance;
use crate::vocab::{split_completion_parts, TokenId, TokenSeq, Vocab};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("cannot train on an empty task set")]
    NoTasks,
    #[error("every rollout group had zero reward variance; nothing to learn from")]
    AllFiltered,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Prior(#[from] crate::prior::PriorError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Hyperparameters for [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct GrpoConfig {
    /// Completions drawn per prompt (the advantage group).
    pub group_size: usize,
    /// Prompts sampled per optimization step.
    pub prompts_per_step: usize,
    pub steps: usize,
    /// Peak learning rate after warmup.
    pub lr: f64,
    /// Fraction of steps spent in linear warmup.
    pub warmup_frac: f64,
    /// Global gradient L2-norm ceiling.
    pub grad_clip: f64,
    /// Weight of the KL penalty against the frozen reference policy.
    pub kl_coeff: f64,
    /// Weight of the entropy bonus.
    pub entropy_coeff: f64,
    /// Sampling temperature during training (must be positive).
    pub temperature: f64,
    /// Generation budget per completion.
    pub max_new_tokens: usize,
    /// Ratio clip half-width for reused batches.
    pub clip_ratio: f64,
    /// Gradient passes per batch of rollouts.
    pub inner_epochs: usize,
    /// Epsilon added to the advantage denominator.
    pub adv_epsilon: f64,
    /// Skip the standard-deviation division (centered advantages only).
    pub center_only: bool,
    pub seed: u64,
    /// Worker threads for rollouts and gradient accumulation.
    pub workers: usize,
    /// Write a checkpoint every N steps (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 16,
            prompts_per_step: 8,
            steps: 150,
            lr: 3e-4,
            warmup_frac: 0.03,
            grad_clip: 1.0,
            kl_coeff: 5e-4,
            entropy_coeff: 1e-3,
            temperature: 0.8,
            max_new_tokens: 32,
            clip_ratio: 0.2,
            inner_epochs: 1,
            adv_epsilon: 1e-6,
            center_only: false,
            seed: 0,
            workers: 1,
            checkpoint_every: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::BadConfig(m));
        if self.group_size < 2 {
            return bad(format!("group_size {} < 2 (advantages need a group)", self.group_size));
        }
        if self.prompts_per_step == 0 || self.steps == 0 || self.max_new_tokens == 0 {
            return bad("prompts_per_step, steps, max_new_tokens must be positive".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad(format!("warmup_frac {} must lie in [0, 1)", self.warmup_frac));
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!("grad_clip {} must be positive", self.grad_clip));
        }
        if self.kl_coeff < 0.0 || self.entropy_coeff < 0.0 {
            return bad("kl_coeff and entropy_coeff must be non-negative".into());
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad(format!("training temperature {} must be positive", self.temperature));
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad(format!("clip_ratio {} must lie in (0, 1)", self.clip_ratio));
        }
        if self.inner_epochs == 0 {
            return bad("inner_epochs must be positive".into());
        }
        if !(self.adv_epsilon > 0.0) {
            return bad(format!("adv_epsilon {} must be positive", self.adv_epsilon));
        }
        if self.workers == 0 {
            return bad("workers must be positive".into());
        }
        Ok(())
    }

    fn warmup_steps(&self) -> usize {
        (self.steps as f64 * self.warmup_frac).ceil() as usize
    }

    /// Learning rate at 0-based step `t`: linear warmup, then constant.
    pub fn lr_at(&self, t: usize) -> f64 {
        let w = self.warmup_steps();
        if t < w {
            self.lr * (t + 1) as f64 / w as f64
        } else {
            self.lr
        }
    }
}

/// One sampled completion with everything the update needs.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// Raw generated tokens (trace, delimiter, answer, EOS as emitted).
    pub completion: TokenSeq,
    /// Temperature-1 log-probability of every completion token, aligned
    /// with `completion`.
    pub completion_logprobs: Vec<f64>,
    /// The structured record (split spans, per-token costs, reward).
    pub sample: TraceSample,
}

/// A prompt with its rollout group and (unless filtered) advantages.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub prompt: TokenSeq,
    pub rollouts: Vec<Rollout>,
    /// `None` when the group had zero reward variance.
    pub advantages: Option<Vec<f64>>,
}

/// Group-relative advantages.
///
/// Rewards are shifted by the group minimum (so integer-valued reward
/// offsets cancel bitwise), centered on the group mean, and unless
/// `center_only` divided by the population standard deviation plus
/// `epsilon`. Returns `None` when every reward in the group is identical.
pub fn compute_advantages(rewards: &[f64], epsilon: f64, center_only: bool) -> Option<Vec<f64>> {
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rewards.iter().copied().fold(f64::INFINITY, f64::min);
    if rewards.is_empty() || !(max > min) {
        return None;
    }
    let n = rewards.len() as f64;
    let shifted: Vec<f64> = rewards.iter().map(|&r| r - min).collect();
    let mean = shifted.iter().sum::<f64>() / n;
    let var = shifted.iter().map(|&s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    Some(
        shifted
            .iter()
            .map(|&s| {
                let c = s - mean;
                if center_only {
                    c
                } else {
                    c / (std + epsilon)
                }
            })
            .collect(),
    )
}

/// Draw one completion and assemble its structured record. The member RNG
/// must be dedicated to this `(step, prompt, member)` slot.
pub fn rollout_one(
    params: &PolicyParams,
    task: &TaskInstance,
    vocab: &Vocab,
    reward: &RewardModel,
    temperature: f64,
    max_new_tokens: usize,
    sample_id: u64,
    rng: &mut StreamRng,
) -> Result<Rollout, TrainError> {
    let completion = policy::sample_completion(
        params,
        &task.prompt,
        temperature,
        max_new_tokens,
        vocab.eos_id(),
        rng,
    )?;
    let parts = split_completion_parts(vocab, &completion.tokens);
    let breakdown = reward.score_parts(&task.gold, &parts.trace, &parts.answer)?;
    // The record's log-probabilities cover trace and answer tokens (plus
    // EOS); the structural delimiter is dropped.
    let mut policy_logprobs = completion.logprobs.clone();
    if parts.has_delim {
        policy_logprobs.remove(parts.trace.len());
    }
    let prior_surprisals = if reward.prior().is_per_token() {
        crate::prior::surprisal_stream(reward.prior().as_ref(), &parts.trace)?
    } else {
        Vec::new()
    };
    let sample = TraceSample {
        id: sample_id,
        prompt: task.prompt.clone(),
        trace: parts.trace,
        answer: parts.answer,
        gold: task.gold.clone(),
        policy_logprobs,
        prior_surprisals,
        reward: Some(breakdown),
    };
    sample.validate()?;
    Ok(Rollout {
        completion: completion.tokens,
        completion_logprobs: completion.logprobs,
        sample,
    })
}

/// Roll out a full group for one prompt; member `g` draws from
/// `group_rng.split(g)`.
pub fn rollout_group(
    params: &PolicyParams,
    task: &TaskInstance,
    vocab: &Vocab,
    reward: &RewardModel,
    cfg: &GrpoConfig,
    base_sample_id: u64,
    group_rng: &StreamRng,
) -> Result<GroupBatch, TrainError> {
    let mut rollouts = Vec::with_capacity(cfg.group_size);
    for g in 0..cfg.group_size {
        let mut rng = group_rng.split(g as u64);
        rollouts.push(rollout_one(
            params,
            task,
            vocab,
            reward,
            cfg.temperature,
            cfg.max_new_tokens,
            base_sample_id + g as u64,
            &mut rng,
        )?);
    }
    let rewards: Vec<f64> =
        rollouts.iter().map(|r| r.sample.reward.expect("rollout is scored").total).collect();
    let advantages = compute_advantages(&rewards, cfg.adv_epsilon, cfg.center_only);
    Ok(GroupBatch { prompt: task.prompt.clone(), rollouts, advantages })
}

/// Flat-vector Adam (ascent form) with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One ascent step along `grad` with step size `lr`.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] += lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Diagnostics from one gradient step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    /// Mean per-token KL against the reference policy.
    pub kl: f64,
    /// Mean per-token next-token entropy.
    pub entropy: f64,
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
}

/// Per-sample gradient contribution plus its scalar diagnostics.
struct SampleGrad {
    grad: Vec<f64>,
    kl_sum: f64,
    entropy_sum: f64,
    n_tokens: usize,
}

/// Clipped-surrogate gradient for one rollout.
fn sample_gradient(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    prompt: &[TokenId],
    rollout: &Rollout,
    advantage: f64,
    cfg: &GrpoConfig,
) -> Result<SampleGrad, TrainError> {
    let completion = &rollout.completion;
    if completion.is_empty() {
        return Ok(SampleGrad {
            grad: vec![0.0; params.n_params()],
            kl_sum: 0.0,
            entropy_sum: 0.0,
            n_tokens: 0,
        });
    }
    let mut tokens = prompt.to_vec();
    tokens.extend_from_slice(&completion[..completion.len() - 1]);
    let tape = policy::forward_tape(params, &tokens)?;
    let ref_tape = policy::forward_tape(ref_params, &tokens)?;
    let vocab_size = params.config().vocab_size;
    let mut dlogits = vec![vec![0.0; vocab_size]; tape.len()];
    let mut kl_sum = 0.0;
    let mut entropy_sum = 0.0;
    for (j, &chosen) in completion.iter().enumerate() {
        let pos = prompt.len() - 1 + j;
        let lsm = policy::log_softmax(tape.logits_at(pos));
        let ref_lsm = policy::log_softmax(ref_tape.logits_at(pos));
        let c = chosen as usize;

        // Clipped-ratio surrogate. The old log-probability is the one
        // recorded at sampling time; on the first pass over a batch the
        // recomputed value is bit-identical, so the ratio is exactly 1.
        let ratio = (lsm[c] - rollout.completion_logprobs[j]).exp();
        let unclipped = ratio * advantage;
        let clipped = ratio.clamp(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * advantage;
        let surrogate_weight = if unclipped <= clipped { ratio * advantage } else { 0.0 };

        let mut entropy = 0.0;
        let mut kl = 0.0;
        for i in 0..vocab_size {
            let p = lsm[i].exp();
            entropy -= p * lsm[i];
            kl += p * (lsm[i] - ref_lsm[i]);
        }
        entropy_sum += entropy;
        kl_sum += kl;

        let row = &mut dlogits[pos];
        for i in 0..vocab_size {
            let p = lsm[i].exp();
            // d log pi[c] / d logit_i = [i == c] - p_i
            let d_logp = if i == c { 1.0 - p } else { -p };
            // d H / d logit_i = -p_i (log p_i + H)
            let d_ent = -p * (lsm[i] + entropy);
            // d KL / d logit_i = p_i (log p_i - log q_i - KL)
            let d_kl = p * (lsm[i] - ref_lsm[i] - kl);
            row[i] += surrogate_weight * d_logp + cfg.entropy_coeff * d_ent - cfg.kl_coeff * d_kl;
        }
    }
    let grad = policy::backward(params, &tape, &dlogits);
    Ok(SampleGrad { grad, kl_sum, entropy_sum, n_tokens: completion.len() })
}

/// One optimizer update over the unfiltered groups. Returns
/// [`TrainError::AllFiltered`] when no group carries signal.
pub fn policy_gradient_step(
    params: &mut PolicyParams,
    ref_params: &PolicyParams,
    groups: &[GroupBatch],
    cfg: &GrpoConfig,
    adam: &mut AdamState,
    lr: f64,
) -> Result<StepStats, TrainError> {
    // Flatten the unfiltered samples in deterministic order.
    let mut jobs: Vec<(&GroupBatch, usize, f64)> = Vec::new();
    for group in groups {
        if let Some(advantages) = &group.advantages {
            for (i, &a) in advantages.iter().enumerate() {
                jobs.push((group, i, a));
            }
        }
    }
    if jobs.is_empty() {
        return Err(TrainError::AllFiltered);
    }

    let mut stats = StepStats::default();
    for _ in 0..cfg.inner_epochs {
        let n_params = params.n_params();
        let chunk = jobs.len().div_ceil(cfg.workers);
        let mut partials: Vec<Result<SampleGrad, TrainError>> = Vec::new();
        std::thread::scope(|scope| {
            let params = &*params;
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|slice| {
                    scope.spawn(move || -> Result<SampleGrad, TrainError> {
                        let mut acc = SampleGrad {
                            grad: vec![0.0; n_params],
                            kl_sum: 0.0,
                            entropy_sum: 0.0,
                            n_tokens: 0,
                        };
                        for &(group, i, adv) in slice {
                            let sg = sample_gradient(
                                params,
                                ref_params,
                                &group.prompt,
                                &group.rollouts[i],
                                adv,
                                cfg,
                            )?;
                            for (a, g) in acc.grad.iter_mut().zip(&sg.grad) {
                                *a += g;
                            }
                            acc.kl_sum += sg.kl_sum;
                            acc.entropy_sum += sg.entropy_sum;
                            acc.n_tokens += sg.n_tokens;
                        }
                        Ok(acc)
                    })
                })
                .collect();
            // Reduce in chunk order so a fixed worker count sums
            // identically every run.
            partials = handles.into_iter().map(|h| h.join().expect("worker panicked")).collect();
        });
        let mut grad = vec![0.0; n_params];
        let mut kl_sum = 0.0;
        let mut entropy_sum = 0.0;
        let mut n_tokens = 0usize;
        for partial in partials {
            let p = partial?;
            for (a, g) in grad.iter_mut().zip(&p.grad) {
                *a += g;
            }
            kl_sum += p.kl_sum;
            entropy_sum += p.entropy_sum;
            n_tokens += p.n_tokens;
        }
        let scale = 1.0 / jobs.len() as f64;
        for g in &mut grad {
            *g *= scale;
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > cfg.grad_clip {
            let s = cfg.grad_clip / norm;
            for g in &mut grad {
                *g *= s;
            }
        }
        adam.ascend(params.data_mut(), &grad, lr);
        stats = StepStats {
            kl: if n_tokens == 0 { 0.0 } else { kl_sum / n_tokens as f64 },
            entropy: if n_tokens == 0 { 0.0 } else { entropy_sum / n_tokens as f64 },
            grad_norm: norm,
        };
    }
    Ok(stats)
}

/// One row of training telemetry (one optimization step).
#[derive(Debug, Clone, Copy)]
pub struct StepMetrics {
    pub step: u64,
    pub mean_reward: f64,
    pub accuracy: f64,
    pub mean_trace_len: f64,
    pub mean_r_min: f64,
    pub kl: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    /// Fraction of this step's groups dropped for zero reward variance.
    pub filtered_fraction: f64,
}

/// Header and row format shared by every metrics CSV this crate writes.
pub const METRICS_HEADER: &str =
    "step,mean_reward,accuracy,mean_trace_len,mean_r_min,kl,entropy,grad_norm,filtered_fraction";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.mean_reward,
            self.accuracy,
            self.mean_trace_len,
            self.mean_r_min,
            self.kl,
            self.entropy,
            self.grad_norm,
            self.filtered_fraction
        )
    }
}

/// Write the full metrics table as CSV.
pub fn write_metrics_csv(path: &Path, metrics: &[StepMetrics]) -> Result<(), TrainError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{METRICS_HEADER}")?;
    for row in metrics {
        writeln!(out, "{}", row.csv_row())?;
    }
    out.flush()?;
    Ok(())
}

/// Everything a finished run hands back.
pub struct TrainResult {
    pub checkpoint: PolicyCheckpoint,
    pub metrics: Vec<StepMetrics>,
}

/// The deterministic initial parameters for a training seed.
pub fn initial_params(cfg: &GrpoConfig, policy_cfg: &PolicyConfig) -> Result<PolicyParams, TrainError> {
    let root = StreamRng::from_seed(cfg.seed);
    Ok(PolicyParams::init(policy_cfg, &mut root.split_str("init"))?)
}

/// Run the full training loop. `on_checkpoint` fires every
/// `checkpoint_every` steps (when non-zero) and once for the final model.
pub fn train(
    cfg: &GrpoConfig,
    policy_cfg: &PolicyConfig,
    tasks: &[TaskInstance],
    vocab: &Vocab,
    reward: &RewardModel,
    mut on_checkpoint: impl FnMut(&PolicyCheckpoint) -> Result<(), TrainError>,
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    policy_cfg.validate().map_err(TrainError::Policy)?;
    if tasks.is_empty() {
        return Err(TrainError::NoTasks);
    }
    let root = StreamRng::from_seed(cfg.seed);
    let mut params = PolicyParams::init(policy_cfg, &mut root.split_str("init"))?;
    let ref_params = params.clone();
    let mut adam = AdamState::new(params.n_params());
    let task_root = root.split_str("tasksel");
    let rollout_root = root.split_str("rollout");

    let mut metrics = Vec::with_capacity(cfg.steps);
    let mut updated_steps = 0usize;
    for step in 0..cfg.steps {
        // Select prompts for this step.
        let mut task_rng = task_root.split(step as u64);
        let step_tasks: Vec<&TaskInstance> =
            (0..cfg.prompts_per_step).map(|_| &tasks[task_rng.next_usize(tasks.len())]).collect();

        // Roll out every (prompt, member) slot on its own stream.
        let step_rng = rollout_root.split(step as u64);
        let groups = parallel_rollouts(&params, &step_tasks, vocab, reward, cfg, step, &step_rng)?;

        // Telemetry over all rollouts, filtered or not.
        let all: Vec<&Rollout> = groups.iter().flat_map(|g| g.rollouts.iter()).collect();
        let n = all.len() as f64;
        let breakdowns: Vec<RewardBreakdown> =
            all.iter().map(|r| r.sample.reward.expect("rollout is scored")).collect();
        let mean_reward = breakdowns.iter().map(|b| b.total).sum::<f64>() / n;
        let accuracy = breakdowns.iter().map(|b| b.r_acc).sum::<f64>() / n;
        let mean_r_min = breakdowns.iter().map(|b| b.r_min).sum::<f64>() / n;
        let mean_trace_len =
            all.iter().map(|r| r.sample.trace.len() as f64).sum::<f64>() / n;
        let filtered =
            groups.iter().filter(|g| g.advantages.is_none()).count() as f64 / groups.len() as f64;

        let stats = match policy_gradient_step(
            &mut params,
            &ref_params,
            &groups,
            cfg,
            &mut adam,
            cfg.lr_at(step),
        ) {
            Ok(stats) => {
                updated_steps += 1;
                stats
            }
            Err(TrainError::AllFiltered) => StepStats::default(),
            Err(e) => return Err(e),
        };

        metrics.push(StepMetrics {
            step: step as u64 + 1,
            mean_reward,
            accuracy,
            mean_trace_len,
            mean_r_min,
            kl: stats.kl,
            entropy: stats.entropy,
            grad_norm: stats.grad_norm,
            filtered_fraction: filtered,
        });

        if cfg.checkpoint_every != 0
            && (step + 1) % cfg.checkpoint_every == 0
            && step + 1 != cfg.steps
        {
            let ckpt = PolicyCheckpoint {
                params: params.clone(),
                vocab_hash: vocab.hash(),
                step: step as u64 + 1,
                rng_state: root.state(),
            };
            on_checkpoint(&ckpt)?;
        }
    }
    if updated_steps == 0 {
        return Err(TrainError::AllFiltered);
    }
    let checkpoint = PolicyCheckpoint {
        params,
        vocab_hash: vocab.hash(),
        step: cfg.steps as u64,
        rng_state: root.state(),
    };
    on_checkpoint(&checkpoint)?;
    Ok(TrainResult { checkpoint, metrics })
}

/// Roll out all groups of a step, spreading (prompt, member) slots over
/// the configured workers. Slot RNG streams make the result identical for
/// any worker count.
fn parallel_rollouts(
    params: &PolicyParams,
    step_tasks: &[&TaskInstance],
    vocab: &Vocab,
    reward: &RewardModel,
    cfg: &GrpoConfig,
    step: usize,
    step_rng: &StreamRng,
) -> Result<Vec<GroupBatch>, TrainError> {
    let slots: Vec<(usize, usize)> = (0..step_tasks.len())
        .flat_map(|p| (0..cfg.group_size).map(move |g| (p, g)))
        .collect();
    let mut results: Vec<Option<Result<Rollout, TrainError>>> =
        (0..slots.len()).map(|_| None).collect();
    let chunk = slots.len().div_ceil(cfg.workers);
    std::thread::scope(|scope| {
        for (slot_chunk, out_chunk) in slots.chunks(chunk).zip(results.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (&(p, g), out) in slot_chunk.iter().zip(out_chunk.iter_mut()) {
                    let mut rng = step_rng.split(p as u64).split(g as u64);
                    let sample_id = ((step as u64) << 32) | ((p as u64) << 16) | g as u64;
                    *out = Some(rollout_one(
                        params,
                        step_tasks[p],
                        vocab,
                        reward,
                        cfg.temperature,
                        cfg.max_new_tokens,
                        sample_id,
                        &mut rng,
                    ));
                }
            });
        }
    });
    let mut flat = Vec::with_capacity(slots.len());
    for r in results {
        flat.push(r.expect("every slot filled")?);
    }
    let mut groups = Vec::with_capacity(step_tasks.len());
    for (p, task) in step_tasks.iter().enumerate() {
        let rollouts: Vec<Rollout> =
            flat[p * cfg.group_size..(p + 1) * cfg.group_size].to_vec();
        let rewards: Vec<f64> =
            rollouts.iter().map(|r| r.sample.reward.expect("rollout is scored").total).collect();
        let advantages = compute_advantages(&rewards, cfg.adv_epsilon, cfg.center_only);
        groups.push(GroupBatch { prompt: task.prompt.clone(), rollouts, advantages });
    }
    Ok(groups)
}
