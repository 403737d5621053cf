//! `sweep`: retrain across an ascending beta grid and tabulate the
//! accuracy/length trade-off (sweep.csv).

use std::path::Path;

use cib_core::eval::{pareto_sweep, write_sweep_csv, EvalConfig};
use cib_core::verifier::VerifierConfig;
use cib_core::vocab::Vocab;

use crate::commands::eval::map_eval_error;
use crate::commands::train::{grpo_config, load_tasks, policy_config};
use crate::config::{CliError, CommandSpec, Ctx, Key};
use crate::priors;

pub static SPEC: CommandSpec = CommandSpec {
    name: "sweep",
    about: "Train once per beta and chart the accuracy/compression frontier (sweep.csv)",
    keys: &[
        Key { name: "tasks", default: None, help: "Training task JSONL file" },
        Key {
            name: "eval-tasks",
            default: Some(""),
            help: "Held-out task JSONL for evaluation (default: the training set)",
        },
        Key {
            name: "betas",
            default: Some("0,0.005,0.02"),
            help: "Comma-separated compression weights, ascending and >= 0",
        },
        Key {
            name: "prior",
            default: Some("uniform"),
            help: "Trace prior: uniform | laplace:N:B | ngram:PATH | \
                   fit-ngram:SAMPLES:ORDER:K | policy:CKPT",
        },
        Key { name: "epsilon", default: Some("0.01"), help: "Verifier smoothing epsilon in (0, 1)" },
        Key { name: "group-size", default: Some("16"), help: "Rollouts per prompt group (> 1)" },
        Key { name: "prompts-per-step", default: Some("8"), help: "Prompt groups per step (> 0)" },
        Key { name: "steps", default: Some("150"), help: "Optimization steps per beta (> 0)" },
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
        Key { name: "temperature", default: Some("0.8"), help: "Rollout temperature (> 0)" },
        Key {
            name: "max-new-tokens",
            default: Some("32"),
            help: "Completion budget per rollout, in tokens (> 0)",
        },
        Key { name: "clip-ratio", default: Some("0.2"), help: "Ratio clip half-width (> 0)" },
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
        Key {
            name: "seed",
            default: Some("0"),
            help: "Run seed shared by every beta (64-bit); identical seeds isolate beta's effect",
        },
        Key { name: "workers", default: Some("1"), help: "Worker threads (>= 1)" },
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
        Key { name: "eval-k", default: Some("16"), help: "Evaluation draws per task (>= 1)" },
        Key {
            name: "eval-temperature",
            default: Some("0.6"),
            help: "Evaluation temperature (0 = greedy)",
        },
        Key {
            name: "eval-max-new-tokens",
            default: Some("32"),
            help: "Evaluation completion budget, in tokens (> 0)",
        },
        Key { name: "eval-seed", default: Some("0"), help: "Evaluation seed (64-bit)" },
    ],
};

pub fn run(ctx: &Ctx, out_dir: &Path) -> Result<String, CliError> {
    let vocab = Vocab::arithmetic();
    let train_tasks = load_tasks(ctx, "tasks", &vocab)?;
    let eval_tasks = if ctx.opt_str("eval-tasks").is_some() {
        load_tasks(ctx, "eval-tasks", &vocab)?
    } else {
        train_tasks.clone()
    };
    let betas = ctx
        .list("betas")
        .iter()
        .map(|b| {
            b.parse::<f64>()
                .map_err(|_| CliError::Validation(format!("beta '{b}' is not a number")))
        })
        .collect::<Result<Vec<f64>, _>>()?;

    let verifier = VerifierConfig { epsilon: ctx.f64("epsilon")? };
    verifier.validate().map_err(|e| CliError::Validation(format!("epsilon: {e}")))?;
    let built = priors::build(ctx.str("prior")?, &vocab)?;
    if let Some(ngram) = &built.fitted {
        ngram
            .save(&out_dir.join("prior.bin"))
            .map_err(|e| CliError::Runtime(format!("cannot save fitted prior: {e}")))?;
    }
    let prior = built.require_model(ctx.command_name())?;

    let train_cfg = grpo_config(ctx)?;
    let policy_cfg = policy_config(ctx, &vocab)?;
    let eval_cfg = EvalConfig {
        k: ctx.usize("eval-k")?,
        temperature: ctx.f64("eval-temperature")?,
        max_new_tokens: ctx.usize("eval-max-new-tokens")?,
        seed: ctx.u64("eval-seed")?,
        workers: ctx.usize("workers")?,
    };

    let outcome = pareto_sweep(
        &betas,
        &train_cfg,
        &policy_cfg,
        &train_tasks,
        &eval_tasks,
        &vocab,
        prior,
        verifier,
        &eval_cfg,
    )
    .map_err(map_eval_error)?;

    let path = out_dir.join("sweep.csv");
    write_sweep_csv(&path, &outcome).map_err(map_eval_error)?;
    let failed = outcome.rows.iter().filter(|r| !r.trained).count();
    Ok(format!(
        "swept {} betas ({} failed rows); baseline accuracy {:.4}, mean trace length {:.2}; \
         wrote {}",
        outcome.rows.len(),
        failed,
        outcome.baseline_accuracy,
        outcome.baseline_mean_trace_len,
        path.display()
    ))
}
