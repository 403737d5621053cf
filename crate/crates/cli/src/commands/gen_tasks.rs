//! `gen-tasks`: deterministic arithmetic task datasets as JSONL.

use std::path::Path;

use cib_core::tasks::{generate, write_tasks, TaskDatasetSpec, TaskFamily};
use cib_core::vocab::Vocab;

use crate::config::{CliError, CommandSpec, Ctx, Key};

pub static SPEC: CommandSpec = CommandSpec {
    name: "gen-tasks",
    about: "Generate an arithmetic task dataset (tasks.jsonl)",
    keys: &[
        Key {
            name: "families",
            default: Some("mod_chain"),
            help: "Comma-separated task families: mod_chain, multi_add",
        },
        Key {
            name: "difficulty-min",
            default: Some("1"),
            help: "Lowest difficulty (number of chained operations, >= 1)",
        },
        Key {
            name: "difficulty-max",
            default: Some("3"),
            help: "Highest difficulty (number of chained operations, >= min)",
        },
        Key { name: "count", default: Some("64"), help: "Tasks to generate (> 0)" },
        Key { name: "seed", default: Some("0"), help: "Dataset seed (64-bit integer)" },
    ],
};

fn parse_family(name: &str) -> Result<TaskFamily, CliError> {
    match name {
        "mod_chain" => Ok(TaskFamily::ModChain),
        "multi_add" => Ok(TaskFamily::MultiAdd),
        other => Err(CliError::Validation(format!(
            "unknown task family '{other}'; expected mod_chain or multi_add"
        ))),
    }
}

pub fn run(ctx: &Ctx, out_dir: &Path) -> Result<String, CliError> {
    let vocab = Vocab::arithmetic();
    let families = ctx
        .list("families")
        .iter()
        .map(|f| parse_family(f))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = TaskDatasetSpec {
        families,
        difficulty_min: ctx.usize("difficulty-min")?,
        difficulty_max: ctx.usize("difficulty-max")?,
        count: ctx.usize("count")?,
        seed: ctx.u64("seed")?,
    };
    let tasks = generate(&spec, &vocab)
        .map_err(|e| CliError::Validation(format!("cannot generate tasks: {e}")))?;
    let path = out_dir.join("tasks.jsonl");
    let file = std::fs::File::create(&path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    write_tasks(std::io::BufWriter::new(file), &tasks, &vocab)
        .map_err(|e| CliError::Runtime(format!("cannot write tasks: {e}")))?;
    Ok(format!("wrote {} tasks to {}", tasks.len(), path.display()))
}
