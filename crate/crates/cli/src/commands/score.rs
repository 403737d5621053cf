//! `score`: fill the reward fields of trace-sample records, using either
//! a local prior model or surprisals already stored on the records (so
//! externally produced traces can be analyzed).

use std::io::BufReader;
use std::path::Path;

use cib_core::prior;
use cib_core::sample::{read_trace_samples, write_trace_samples, RewardBreakdown};
use cib_core::verifier::check_answer_ids;
use cib_core::vocab::Vocab;

use crate::config::{CliError, CommandSpec, Ctx, Key};
use crate::priors;

pub static SPEC: CommandSpec = CommandSpec {
    name: "score",
    about: "Fill accuracy/minimality rewards on a sample file (samples_scored.jsonl)",
    keys: &[
        Key {
            name: "samples",
            default: None,
            help: "Trace-sample JSONL file; records need prompt/trace/answer/gold ids",
        },
        Key {
            name: "prior",
            default: Some("stored"),
            help: "Minimality source: stored (use record surprisals) | uniform | laplace:N:B | \
                   ngram:PATH | fit-ngram:SAMPLES:ORDER:K | policy:CKPT",
        },
        Key {
            name: "beta",
            default: Some("0.005"),
            help: "Compression weight written into every reward (per nat, >= 0)",
        },
    ],
};

pub fn run(ctx: &Ctx, out_dir: &Path) -> Result<String, CliError> {
    let vocab = Vocab::arithmetic();
    let path = ctx.str("samples")?;
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Validation(format!("cannot open samples '{path}': {e}")))?;
    let mut samples = read_trace_samples(BufReader::new(file))
        .map_err(|e| CliError::Validation(format!("samples '{path}': {e}")))?;

    let beta = ctx.f64("beta")?;
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(CliError::Validation(format!("beta={beta} must be finite and >= 0")));
    }
    let built = priors::build(ctx.str("prior")?, &vocab)?;
    if let Some(ngram) = &built.fitted {
        ngram
            .save(&out_dir.join("prior.bin"))
            .map_err(|e| CliError::Runtime(format!("cannot save fitted prior: {e}")))?;
    }

    let mut total = 0.0;
    let mut correct = 0u64;
    for sample in &mut samples {
        let r_min = match &built.model {
            Some(model) => prior::minimality_reward(model.as_ref(), &sample.trace)
                .map_err(|e| CliError::Validation(format!("record {}: {e}", sample.id)))?,
            None => {
                if sample.prior_surprisals.is_empty() && !sample.trace.is_empty() {
                    return Err(CliError::Validation(format!(
                        "record {} has no stored surprisals; pass a prior model instead of \
                         prior=stored",
                        sample.id
                    )));
                }
                -sample.prior_surprisals.iter().sum::<f64>()
            }
        };
        let r_acc = if check_answer_ids(&sample.gold, &sample.answer) {
            correct += 1;
            1.0
        } else {
            0.0
        };
        let breakdown = RewardBreakdown::new(r_acc, r_min, beta);
        total += breakdown.total;
        sample.reward = Some(breakdown);
    }

    let out_path = out_dir.join("samples_scored.jsonl");
    let out_file = std::fs::File::create(&out_path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_path.display())))?;
    write_trace_samples(std::io::BufWriter::new(out_file), &samples, Some(&vocab))
        .map_err(|e| CliError::Runtime(format!("cannot write scored samples: {e}")))?;
    let n = samples.len().max(1) as f64;
    Ok(format!(
        "scored {} records with beta={beta} ({} exact-match answers, mean total reward {:.4}); \
         wrote {}",
        samples.len(),
        correct,
        total / n,
        out_path.display()
    ))
}
