//! `mi-check`: randomized audits of the variational information bounds on
//! exactly enumerable worlds. Exits nonzero if any bound is violated.

use std::io::Write as _;
use std::path::Path;

use cib_core::infotheory::{
    check_minimality_bound, check_sufficiency_bound, check_sufficiency_bound_with,
    cond_entropy_y_given_x, cond_entropy_y_given_xz, exact_cmi_yz_given_x, random_world,
    InfoError,
};
use cib_core::rng::StreamRng;

use crate::config::{CliError, CommandSpec, Ctx, Key};

pub static SPEC: CommandSpec = CommandSpec {
    name: "mi-check",
    about: "Audit the information bounds on random enumerable worlds (mi_check.csv)",
    keys: &[
        Key { name: "audits", default: Some("1000"), help: "Random worlds per audit (> 0)" },
        Key { name: "seed", default: Some("7"), help: "Audit seed (64-bit)" },
        Key { name: "prompts", default: Some("4"), help: "Prompts per world (1..=8)" },
        Key { name: "trace-vocab", default: Some("2"), help: "Trace alphabet size (1..=4)" },
        Key { name: "trace-len", default: Some("2"), help: "Maximum trace length (0..=4)" },
        Key { name: "answers", default: Some("3"), help: "Answers per world (1..=32)" },
        Key {
            name: "tol",
            default: Some("1e-10"),
            help: "Slack tolerance in nats (> 0); bounds may undershoot by at most this",
        },
    ],
};

struct AuditRow {
    check: &'static str,
    /// Worst observed value (most negative slack, or largest gap).
    worst: f64,
    /// True when the worst value respects the tolerance.
    holds: bool,
}

fn random_simplex(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| rng.next_f64() + 0.05).collect();
    let sum: f64 = row.iter().sum();
    for v in &mut row {
        *v /= sum;
    }
    row
}

fn map_info_error(e: InfoError) -> CliError {
    match e {
        InfoError::TooLarge(_) | InfoError::BadDistribution(_) => {
            CliError::Validation(e.to_string())
        }
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn run(ctx: &Ctx, out_dir: &Path) -> Result<String, CliError> {
    let audits = ctx.usize("audits")?;
    if audits == 0 {
        return Err(CliError::Validation("audits must be positive".into()));
    }
    let tol = ctx.f64("tol")?;
    if !(tol > 0.0) {
        return Err(CliError::Validation(format!("tol={tol} must be positive")));
    }
    let (prompts, trace_vocab, trace_len, answers) = (
        ctx.usize("prompts")?,
        ctx.usize("trace-vocab")?,
        ctx.usize("trace-len")?,
        ctx.usize("answers")?,
    );

    let mut rng = StreamRng::from_seed(ctx.u64("seed")?).split_str("mi-check");
    let mut min_minimality_slack = f64::INFINITY;
    let mut worst_tightness = 0.0_f64;
    let mut min_sufficiency_slack = f64::INFINITY;
    let mut min_decoder_slack = f64::INFINITY;
    let mut worst_chain_gap = 0.0_f64;
    for _ in 0..audits {
        let world = random_world(&mut rng, prompts, trace_vocab, trace_len, answers)
            .map_err(map_info_error)?;

        let q = random_simplex(&mut rng, world.n_traces());
        let bound = check_minimality_bound(&world, &q).map_err(map_info_error)?;
        min_minimality_slack = min_minimality_slack.min(bound.slack);
        let tight = check_minimality_bound(&world, &world.marginal_z()).map_err(map_info_error)?;
        worst_tightness = worst_tightness.max(tight.slack.abs());

        let own = check_sufficiency_bound(&world).map_err(map_info_error)?;
        min_sufficiency_slack = min_sufficiency_slack.min(own.slack);
        let decoder: Vec<Vec<Vec<f64>>> = (0..world.n_prompts())
            .map(|_| {
                (0..world.n_traces()).map(|_| random_simplex(&mut rng, world.n_answers())).collect()
            })
            .collect();
        let loose = check_sufficiency_bound_with(&world, &decoder).map_err(map_info_error)?;
        min_decoder_slack = min_decoder_slack.min(loose.slack);

        // Chain rule versus the direct conditional mutual information.
        let via_chain = exact_cmi_yz_given_x(&world);
        debug_assert_eq!(
            via_chain,
            cond_entropy_y_given_x(&world) - cond_entropy_y_given_xz(&world)
        );
        let p_y_given_x = world.answer_given_prompt();
        let mut direct = 0.0;
        for x in 0..world.n_prompts() {
            for z in 0..world.n_traces() {
                for y in 0..world.n_answers() {
                    let pzy = world.policy_z[x][z] * world.policy_y[x][z][y];
                    if pzy > 0.0 {
                        direct += world.p_x[x]
                            * pzy
                            * (pzy / (world.policy_z[x][z] * p_y_given_x[x][y])).ln();
                    }
                }
            }
        }
        worst_chain_gap = worst_chain_gap.max((via_chain - direct).abs());
    }

    let rows = [
        AuditRow {
            check: "minimality_bound_slack",
            worst: min_minimality_slack,
            holds: min_minimality_slack >= -tol,
        },
        AuditRow {
            check: "minimality_tight_at_marginal",
            worst: worst_tightness,
            holds: worst_tightness < tol,
        },
        AuditRow {
            check: "sufficiency_bound_slack",
            worst: min_sufficiency_slack,
            holds: min_sufficiency_slack >= -tol,
        },
        AuditRow {
            check: "sufficiency_random_decoder_slack",
            worst: min_decoder_slack,
            holds: min_decoder_slack >= -tol,
        },
        AuditRow {
            check: "chain_rule_gap",
            worst: worst_chain_gap,
            holds: worst_chain_gap < tol,
        },
    ];

    let csv_path = out_dir.join("mi_check.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path).map_err(|e| {
        CliError::Runtime(format!("cannot create {}: {e}", csv_path.display()))
    })?);
    let io_err = |e: std::io::Error| CliError::Runtime(format!("cannot write audit CSV: {e}"));
    writeln!(csv, "check,audits,worst,tol,holds").map_err(io_err)?;
    println!("{:<34} {:>8} {:>14} {:>9} holds", "check", "audits", "worst", "tol");
    for row in &rows {
        writeln!(csv, "{},{audits},{},{tol},{}", row.check, row.worst, row.holds)
            .map_err(io_err)?;
        println!(
            "{:<34} {:>8} {:>14.3e} {:>9.0e} {}",
            row.check,
            audits,
            row.worst,
            tol,
            if row.holds { "yes" } else { "NO" }
        );
    }
    csv.flush().map_err(io_err)?;

    let failures: Vec<&str> = rows.iter().filter(|r| !r.holds).map(|r| r.check).collect();
    if failures.is_empty() {
        Ok(format!(
            "all {} audits passed every bound within {tol} nats; wrote {}",
            audits,
            csv_path.display()
        ))
    } else {
        Err(CliError::Runtime(format!("bound violations in: {}", failures.join(", "))))
    }
}
