//! `train`: group-relative policy optimization against a composite
//! accuracy + compression reward.

use std::io::BufReader;
use std::path::Path;

use cib_core::policy::PolicyConfig;
use cib_core::reward::RewardModel;
use cib_core::tasks::{read_tasks, TaskInstance};
use cib_core::trainer::{self, write_metrics_csv, GrpoConfig, TrainError};
use cib_core::verifier::VerifierConfig;
use cib_core::vocab::Vocab;

use crate::config::{CliError, CommandSpec, Ctx, Key};
use crate::priors;

pub static SPEC: CommandSpec = CommandSpec {
    name: "train",
    about: "Train a policy on a task dataset (metrics.csv, ckpt_final.bin)",
    keys: &[
        Key { name: "tasks", default: None, help: "Task JSONL file from gen-tasks" },
        Key {
            name: "prior",
            default: Some("uniform"),
            help: "Trace prior: uniform | laplace:N:B | ngram:PATH | \
                   fit-ngram:SAMPLES:ORDER:K | policy:CKPT",
        },
        Key {
            name: "beta",
            default: Some("0.005"),
            help: "Compression weight on the minimality reward (per nat, >= 0)",
        },
        Key {
            name: "alpha",
            default: Some(""),
            help: "Per-token length penalty (nats/token); implies a uniform prior with \
                   beta = alpha/ln|V| and conflicts with an explicit beta",
        },
        Key {
            name: "epsilon",
            default: Some("0.01"),
            help: "Verifier smoothing epsilon in (0, 1)",
        },
        Key {
            name: "norm-r-min-by-len",
            default: Some("false"),
            help: "Divide the minimality reward by trace length (true/false)",
        },
        Key {
            name: "r-min-clip",
            default: Some(""),
            help: "Floor the minimality reward at -VALUE nats (> 0; empty = off)",
        },
        Key { name: "group-size", default: Some("16"), help: "Rollouts per prompt group (> 1)" },
        Key { name: "prompts-per-step", default: Some("8"), help: "Prompt groups per step (> 0)" },
        Key { name: "steps", default: Some("150"), help: "Optimization steps (> 0)" },
        Key { name: "lr", default: Some("0.0003"), help: "Adam learning rate (> 0)" },
        Key {
            name: "warmup-frac",
            default: Some("0.03"),
            help: "Fraction of steps under linear warmup, in [0, 1]",
        },
        Key { name: "grad-clip", default: Some("1"), help: "Gradient-norm ceiling (> 0)" },
        Key {
            name: "kl-coeff",
            default: Some("0.0005"),
            help: "Per-token KL penalty toward the frozen initial policy (>= 0)",
        },
        Key {
            name: "entropy-coeff",
            default: Some("0.001"),
            help: "Per-token entropy bonus weight (>= 0)",
        },
        Key {
            name: "temperature",
            default: Some("0.8"),
            help: "Rollout sampling temperature (> 0)",
        },
        Key {
            name: "max-new-tokens",
            default: Some("32"),
            help: "Completion budget per rollout, in tokens (> 0)",
        },
        Key {
            name: "clip-ratio",
            default: Some("0.2"),
            help: "Policy-ratio clip half-width (> 0)",
        },
        Key {
            name: "inner-epochs",
            default: Some("1"),
            help: "Gradient passes per rollout batch (>= 1)",
        },
        Key {
            name: "adv-epsilon",
            default: Some("1e-6"),
            help: "Stabilizer added to the advantage std (> 0)",
        },
        Key {
            name: "center-only",
            default: Some("false"),
            help: "Skip advantage std-normalization (true/false)",
        },
        Key { name: "seed", default: Some("0"), help: "Run seed driving all randomness (64-bit)" },
        Key {
            name: "workers",
            default: Some("1"),
            help: "Worker threads (>= 1); rollouts are worker-count independent, gradient \
                   reduction is deterministic for a fixed count",
        },
        Key {
            name: "checkpoint-every",
            default: Some("0"),
            help: "Save ckpt_step_N.bin every N steps (0 = final checkpoint only)",
        },
        Key {
            name: "dump-samples",
            default: Some("0"),
            help: "After training, roll out N scored samples from the final policy into \
                   samples.jsonl (0 = off)",
        },
        Key { name: "embed-dim", default: Some("32"), help: "Model width (multiple of n-heads)" },
        Key { name: "n-heads", default: Some("2"), help: "Attention heads (> 0)" },
        Key { name: "n-blocks", default: Some("2"), help: "Transformer blocks (> 0)" },
        Key { name: "mlp-hidden", default: Some("128"), help: "Feed-forward hidden width (> 0)" },
        Key {
            name: "context-len",
            default: Some("256"),
            help: "Attention window in tokens (>= prompt length + completion budget)",
        },
        Key {
            name: "init-std",
            default: Some("0.02"),
            help: "Gaussian init scale for embeddings/projections (> 0)",
        },
    ],
};

/// Read tasks and insist they were generated under the CLI's vocabulary.
pub fn load_tasks(ctx: &Ctx, key: &str, vocab: &Vocab) -> Result<Vec<TaskInstance>, CliError> {
    let path = ctx.str(key)?;
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Validation(format!("cannot open {key} '{path}': {e}")))?;
    let (tasks, hash) = read_tasks(BufReader::new(file))
        .map_err(|e| CliError::Validation(format!("{key} '{path}': {e}")))?;
    if hash != vocab.hash() {
        return Err(CliError::Validation(format!(
            "{key} '{path}' was generated under a different vocabulary"
        )));
    }
    Ok(tasks)
}

/// Shared between `train` and `sweep`: the optimizer knobs.
pub fn grpo_config(ctx: &Ctx) -> Result<GrpoConfig, CliError> {
    Ok(GrpoConfig {
        group_size: ctx.usize("group-size")?,
        prompts_per_step: ctx.usize("prompts-per-step")?,
        steps: ctx.usize("steps")?,
        lr: ctx.f64("lr")?,
        warmup_frac: ctx.f64("warmup-frac")?,
        grad_clip: ctx.f64("grad-clip")?,
        kl_coeff: ctx.f64("kl-coeff")?,
        entropy_coeff: ctx.f64("entropy-coeff")?,
        temperature: ctx.f64("temperature")?,
        max_new_tokens: ctx.usize("max-new-tokens")?,
        clip_ratio: ctx.f64("clip-ratio")?,
        inner_epochs: ctx.usize("inner-epochs")?,
        adv_epsilon: ctx.f64("adv-epsilon")?,
        center_only: ctx.bool("center-only")?,
        seed: ctx.u64("seed")?,
        workers: ctx.usize("workers")?,
        checkpoint_every: if ctx.spec_has("checkpoint-every") {
            ctx.usize("checkpoint-every")?
        } else {
            0
        },
    })
}

/// Shared between `train` and `sweep`: the model shape.
pub fn policy_config(ctx: &Ctx, vocab: &Vocab) -> Result<PolicyConfig, CliError> {
    Ok(PolicyConfig {
        vocab_size: vocab.size(),
        context_len: ctx.usize("context-len")?,
        embed_dim: ctx.usize("embed-dim")?,
        n_heads: ctx.usize("n-heads")?,
        n_blocks: ctx.usize("n-blocks")?,
        mlp_hidden: ctx.usize("mlp-hidden")?,
        init_std: ctx.f64("init-std")?,
    })
}

/// Build the reward model from the prior/beta/alpha/shaping keys; saves a
/// freshly fitted n-gram prior into the run directory.
pub fn reward_model(ctx: &Ctx, vocab: &Vocab, out_dir: &Path) -> Result<RewardModel, CliError> {
    let verifier = VerifierConfig { epsilon: ctx.f64("epsilon")? };
    verifier
        .validate()
        .map_err(|e| CliError::Validation(format!("epsilon: {e}")))?;
    let mut model = match ctx.opt_f64("alpha")? {
        Some(alpha) => {
            if ctx.was_set("beta") {
                return Err(CliError::Validation(
                    "alpha and beta are mutually exclusive; alpha derives beta = alpha/ln|V| \
                     on a uniform prior"
                        .into(),
                ));
            }
            if ctx.was_set("prior") && ctx.str("prior")? != "uniform" {
                return Err(CliError::Validation(
                    "alpha implies the uniform prior; drop the prior key or set prior=uniform"
                        .into(),
                ));
            }
            RewardModel::linear_length(alpha, vocab.size(), verifier)
                .map_err(|e| CliError::Validation(e.to_string()))?
        }
        None => {
            let built = priors::build(ctx.str("prior")?, vocab)?;
            if let Some(ngram) = &built.fitted {
                let path = out_dir.join("prior.bin");
                ngram
                    .save(&path)
                    .map_err(|e| CliError::Runtime(format!("cannot save fitted prior: {e}")))?;
            }
            let prior = built.require_model(ctx.command_name())?;
            RewardModel::new(prior, ctx.f64("beta")?, verifier)
                .map_err(|e| CliError::Validation(e.to_string()))?
        }
    };
    model.normalize_r_min_by_len = ctx.bool("norm-r-min-by-len")?;
    model.r_min_clip = ctx.opt_f64("r-min-clip")?;
    if let Some(clip) = model.r_min_clip {
        if !(clip > 0.0) {
            return Err(CliError::Validation(format!("r-min-clip={clip} must be positive")));
        }
    }
    Ok(model)
}

fn map_train_error(e: TrainError) -> CliError {
    match e {
        TrainError::BadConfig(_) | TrainError::NoTasks => CliError::Validation(e.to_string()),
        TrainError::AllFiltered => CliError::Runtime(format!(
            "{e} (try beta > 0, more rollouts per group, or a higher temperature)"
        )),
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn run(ctx: &Ctx, out_dir: &Path) -> Result<String, CliError> {
    let vocab = Vocab::arithmetic();
    let tasks = load_tasks(ctx, "tasks", &vocab)?;
    let reward = reward_model(ctx, &vocab, out_dir)?;
    let cfg = grpo_config(ctx)?;
    let policy_cfg = policy_config(ctx, &vocab)?;
    cfg.validate().map_err(map_train_error)?;
    policy_cfg
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let total_steps = cfg.steps;
    let result = trainer::train(&cfg, &policy_cfg, &tasks, &vocab, &reward, |ckpt| {
        let name = if ckpt.step as usize == total_steps {
            "ckpt_final.bin".to_string()
        } else {
            format!("ckpt_step_{}.bin", ckpt.step)
        };
        ckpt.save(&out_dir.join(name))
            .map_err(cib_core::trainer::TrainError::Policy)
    })
    .map_err(map_train_error)?;

    let metrics_path = out_dir.join("metrics.csv");
    write_metrics_csv(&metrics_path, &result.metrics)
        .map_err(|e| CliError::Runtime(format!("cannot write metrics: {e}")))?;

    let n_dump = ctx.usize("dump-samples")?;
    let dumped = if n_dump > 0 {
        let samples = dump_samples(&result, &tasks, &vocab, &reward, &cfg, n_dump)?;
        let path = out_dir.join("samples.jsonl");
        let file = std::fs::File::create(&path)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
        cib_core::sample::write_trace_samples(std::io::BufWriter::new(file), &samples, Some(&vocab))
            .map_err(|e| CliError::Runtime(format!("cannot write samples: {e}")))?;
        format!("; dumped {n_dump} samples to samples.jsonl")
    } else {
        String::new()
    };

    let last = result.metrics.last().expect("steps > 0");
    Ok(format!(
        "trained {} steps on {} tasks; final step: mean reward {:.4}, accuracy {:.3}, \
         mean trace length {:.2}; wrote {} and ckpt_final.bin{}",
        result.metrics.len(),
        tasks.len(),
        last.mean_reward,
        last.accuracy,
        last.mean_trace_len,
        metrics_path.display(),
        dumped
    ))
}

/// Scored rollouts from the final policy, cycling tasks round-robin on a
/// dedicated RNG stream (so the dump never perturbs training randomness).
fn dump_samples(
    result: &trainer::TrainResult,
    tasks: &[cib_core::tasks::TaskInstance],
    vocab: &Vocab,
    reward: &RewardModel,
    cfg: &GrpoConfig,
    n: usize,
) -> Result<Vec<cib_core::sample::TraceSample>, CliError> {
    let root = cib_core::rng::StreamRng::from_seed(cfg.seed).split_str("dump-samples");
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let task = &tasks[i % tasks.len()];
        let mut rng = root.split(i as u64);
        let rollout = trainer::rollout_one(
            &result.checkpoint.params,
            task,
            vocab,
            reward,
            cfg.temperature,
            cfg.max_new_tokens,
            i as u64,
            &mut rng,
        )
        .map_err(map_train_error)?;
        samples.push(rollout.sample);
    }
    Ok(samples)
}
