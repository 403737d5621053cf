//! `eval`: pass@1 accuracy and trace-length statistics for a checkpoint.

use std::path::Path;

use cib_core::eval::{evaluate, write_eval_csv, EvalConfig, EvalError, EvalRecord};
use cib_core::policy::PolicyCheckpoint;
use cib_core::vocab::Vocab;

use crate::config::{CliError, CommandSpec, Ctx, Key};
use crate::commands::train::load_tasks;

pub static SPEC: CommandSpec = CommandSpec {
    name: "eval",
    about: "Evaluate a checkpoint on a task dataset (eval.csv)",
    keys: &[
        Key { name: "ckpt", default: None, help: "Policy checkpoint file from train" },
        Key { name: "tasks", default: None, help: "Task JSONL file from gen-tasks" },
        Key { name: "k", default: Some("16"), help: "Completions drawn per task (>= 1)" },
        Key {
            name: "temperature",
            default: Some("0.6"),
            help: "Sampling temperature (0 = greedy)",
        },
        Key {
            name: "max-new-tokens",
            default: Some("32"),
            help: "Completion budget per draw, in tokens (> 0)",
        },
        Key { name: "seed", default: Some("0"), help: "Evaluation seed (64-bit)" },
        Key { name: "workers", default: Some("1"), help: "Worker threads (>= 1)" },
        Key {
            name: "beta",
            default: Some(""),
            help: "Training beta recorded as metadata in eval.csv (optional)",
        },
        Key {
            name: "prior-id",
            default: Some(""),
            help: "Training prior identity recorded as metadata in eval.csv (optional)",
        },
    ],
};

pub fn map_eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::BadConfig(_)
        | EvalError::EmptyTaskSet
        | EvalError::VocabMismatch { .. }
        | EvalError::NotPerToken(_)
        | EvalError::NoSurprisals { .. } => CliError::Validation(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn load_checkpoint(ctx: &Ctx, key: &str, vocab: &Vocab) -> Result<PolicyCheckpoint, CliError> {
    let path = ctx.str(key)?;
    let ckpt = PolicyCheckpoint::load(Path::new(path))
        .map_err(|e| CliError::Validation(format!("{key} '{path}': {e}")))?;
    if ckpt.vocab_hash != vocab.hash() {
        return Err(CliError::Validation(format!(
            "{key} '{path}' was trained under a different vocabulary"
        )));
    }
    Ok(ckpt)
}

pub fn run(ctx: &Ctx, out_dir: &Path) -> Result<String, CliError> {
    let vocab = Vocab::arithmetic();
    let ckpt = load_checkpoint(ctx, "ckpt", &vocab)?;
    let tasks = load_tasks(ctx, "tasks", &vocab)?;
    let cfg = EvalConfig {
        k: ctx.usize("k")?,
        temperature: ctx.f64("temperature")?,
        max_new_tokens: ctx.usize("max-new-tokens")?,
        seed: ctx.u64("seed")?,
        workers: ctx.usize("workers")?,
    };
    let outcome = evaluate(&ckpt, &tasks, &vocab, &cfg).map_err(map_eval_error)?;
    let record = EvalRecord {
        model_id: ctx.str("ckpt")?.to_string(),
        task_set_id: ctx.str("tasks")?.to_string(),
        beta: ctx.opt_f64("beta")?,
        prior_id: ctx.opt_str("prior-id").map(str::to_string),
        outcome,
    };
    let path = out_dir.join("eval.csv");
    write_eval_csv(&path, &record).map_err(map_eval_error)?;
    let o = &record.outcome;
    Ok(format!(
        "evaluated {} tasks x {} draws: accuracy {:.4}, mean trace length {:.2}, median {}; \
         wrote {}",
        o.n_tasks,
        o.k,
        o.accuracy,
        o.mean_trace_len,
        o.median_trace_len,
        path.display()
    ))
}
