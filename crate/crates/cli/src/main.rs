//! `cib`: a desk-scale toolkit for training and analyzing policies under
//! an accuracy + compression reward.
//!
//! Every subcommand resolves a flat key=value configuration (flags
//! override a `--config` file, which overrides defaults), writes a
//! `resolved.cfg` snapshot plus `run_meta.txt` into its output directory,
//! and then produces its primary CSV/JSONL outputs there. Re-running a
//! subcommand from its own snapshot (single worker) reproduces those
//! primary outputs byte for byte.
//!
//! Exit codes: 0 success, 1 usage/validation error, 2 runtime failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cib_cli::commands;
use cib_cli::config::{CliError, CommandSpec, Ctx};
use cib_cli::{OUT_ROOT_VAR, SPECS};

fn build_cli() -> clap::Command {
    let mut root = clap::Command::new("cib")
        .about(
            "Train tiny trace-writing policies under an accuracy + compression reward, \
             audit the underlying information bounds, and analyze the results",
        )
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for spec in SPECS {
        let mut sub = clap::Command::new(spec.name)
            .about(spec.about)
            .arg(
                clap::Arg::new("config")
                    .long("config")
                    .value_name("PATH")
                    .help("Key=value config file; explicit flags override its entries"),
            )
            .arg(clap::Arg::new("out").long("out").value_name("DIR").help(format!(
                "Output directory [default: ${OUT_ROOT_VAR}/{0} or ./runs/{0}]",
                spec.name
            )));
        for key in spec.keys {
            let help = match key.default {
                None => format!("{} [required]", key.help),
                Some("") => format!("{} [optional]", key.help),
                Some(d) => format!("{} [default: {d}]", key.help),
            };
            sub = sub.arg(clap::Arg::new(key.name).long(key.name).value_name("VALUE").help(help));
        }
        root = root.subcommand(sub);
    }
    root
}

fn out_dir_for(name: &str, flag: Option<&str>) -> PathBuf {
    match flag {
        Some(dir) => PathBuf::from(dir),
        None => match std::env::var_os(OUT_ROOT_VAR) {
            Some(home) => PathBuf::from(home).join(name),
            None => PathBuf::from("runs").join(name),
        },
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unavailable".to_string())
}

/// Timestamped, run-local metadata. Kept out of the primary outputs so
/// reruns stay byte-identical.
fn write_run_meta(out_dir: &Path, ctx: &Ctx) -> Result<(), CliError> {
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let meta = format!(
        "command={}\nseed={}\ngit_describe={}\ntimestamp_unix={}\nargv={}\n",
        ctx.command_name(),
        ctx.get("seed").unwrap_or("n/a"),
        git_describe(),
        timestamp,
        argv.join(" "),
    );
    std::fs::write(out_dir.join("run_meta.txt"), meta)
        .map_err(|e| CliError::Runtime(format!("cannot write run_meta.txt: {e}")))
}

fn execute(
    spec: &'static CommandSpec,
    matches: &clap::ArgMatches,
) -> Result<String, CliError> {
    let mut flags = BTreeMap::new();
    for key in spec.keys {
        if let Some(value) = matches.get_one::<String>(key.name) {
            flags.insert(key.name.to_string(), value.clone());
        }
    }
    let config_path = matches.get_one::<String>("config").map(PathBuf::from);
    let ctx = Ctx::resolve(spec, config_path.as_deref(), &flags)?;

    let out_dir = out_dir_for(spec.name, matches.get_one::<String>("out").map(|s| s.as_str()));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    std::fs::write(out_dir.join("resolved.cfg"), ctx.snapshot())
        .map_err(|e| CliError::Runtime(format!("cannot write resolved.cfg: {e}")))?;
    write_run_meta(&out_dir, &ctx)?;

    match spec.name {
        "gen-tasks" => commands::gen_tasks::run(&ctx, &out_dir),
        "train" => commands::train::run(&ctx, &out_dir),
        "eval" => commands::eval::run(&ctx, &out_dir),
        "sweep" => commands::sweep::run(&ctx, &out_dir),
        "profile" => commands::profile::run(&ctx, &out_dir),
        "score" => commands::score::run(&ctx, &out_dir),
        "mi-check" => commands::mi_check::run(&ctx, &out_dir),
        other => unreachable!("unrouted subcommand {other}"),
    }
}

fn real_main() -> i32 {
    let matches = match build_cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            // Help and version requests are successes; everything else is
            // a usage error (clap's message names the offending flag).
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let spec = SPECS.iter().find(|s| s.name == name).expect("known subcommand");
    match execute(spec, sub) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() {
    std::process::exit(real_main());
}
