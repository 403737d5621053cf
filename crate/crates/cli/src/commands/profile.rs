//! `profile`: positional information-density curve and the
//! length/minimality correlation for a sample file.

use std::io::BufReader;
use std::path::Path;

use cib_core::eval::{
    info_density_profile, minimality_length_correlation, write_correlation_csv,
    write_profile_csv, EvalError,
};
use cib_core::prior::PriorModel;
use cib_core::sample::read_trace_samples;
use cib_core::vocab::Vocab;

use crate::commands::eval::map_eval_error;
use crate::config::{CliError, CommandSpec, Ctx, Key};
use crate::priors;

pub static SPEC: CommandSpec = CommandSpec {
    name: "profile",
    about: "Where traces spend their bits: density profile and length correlation \
            (profile.csv, correlation.csv)",
    keys: &[
        Key {
            name: "samples",
            default: None,
            help: "Trace-sample JSONL file (from score or external tooling)",
        },
        Key {
            name: "prior",
            default: Some("stored"),
            help: "Surprisal source: stored (use record surprisals) | uniform | ngram:PATH | \
                   fit-ngram:SAMPLES:ORDER:K | policy:CKPT (per-token models only)",
        },
        Key {
            name: "bins",
            default: Some("20"),
            help: "Relative-position bins across each trace (> 0)",
        },
        Key {
            name: "corr-bins",
            default: Some("10"),
            help: "Quantile length bins in the correlation table (> 0)",
        },
    ],
};

pub fn run(ctx: &Ctx, out_dir: &Path) -> Result<String, CliError> {
    let vocab = Vocab::arithmetic();
    let path = ctx.str("samples")?;
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Validation(format!("cannot open samples '{path}': {e}")))?;
    let samples = read_trace_samples(BufReader::new(file))
        .map_err(|e| CliError::Validation(format!("samples '{path}': {e}")))?;

    let built = priors::build(ctx.str("prior")?, &vocab)?;
    if let Some(ngram) = &built.fitted {
        ngram
            .save(&out_dir.join("prior.bin"))
            .map_err(|e| CliError::Runtime(format!("cannot save fitted prior: {e}")))?;
    }
    let prior_ref: Option<&dyn PriorModel> = match &built.model {
        Some(p) => Some(p.as_ref()),
        None => None,
    };

    let profile = info_density_profile(&samples, prior_ref, ctx.usize("bins")?)
        .map_err(map_eval_error)?;
    let profile_path = out_dir.join("profile.csv");
    write_profile_csv(&profile_path, &profile).map_err(map_eval_error)?;

    let corr_note = match minimality_length_correlation(&samples, prior_ref, ctx.usize("corr-bins")?)
    {
        Ok(report) => {
            write_correlation_csv(&out_dir.join("correlation.csv"), &report)
                .map_err(map_eval_error)?;
            format!("length/minimality r = {:.4} over {} samples", report.pearson_r, report.n)
        }
        Err(EvalError::DegenerateSample(why)) => {
            eprintln!("note: skipping correlation.csv ({why})");
            "correlation skipped (degenerate sample set)".to_string()
        }
        Err(e) => return Err(map_eval_error(e)),
    };

    let tokens: u64 = profile.iter().map(|b| b.count).sum();
    Ok(format!(
        "profiled {} samples ({} trace tokens) into {} bins; {}; wrote {}",
        samples.len(),
        tokens,
        profile.len(),
        corr_note,
        profile_path.display()
    ))
}
