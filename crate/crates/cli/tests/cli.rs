//! End-to-end checks of the `cib` binary: exit codes, help coverage,
//! config precedence, and run-directory contents.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cib_cli::SPECS;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cib"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary spawns")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Generate a tiny task set and return its path.
fn gen_tasks(dir: &Path, count: usize, seed: u64) -> PathBuf {
    let out_dir = dir.join(format!("tasks_{seed}"));
    let out = run(&[
        "gen-tasks",
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--difficulty-min",
        "1",
        "--difficulty-max",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "gen-tasks failed: {}", stderr(&out));
    out_dir.join("tasks.jsonl")
}

#[test]
fn help_lists_every_key_with_its_marker() {
    for spec in SPECS {
        let out = run(&[spec.name, "--help"]);
        assert_eq!(code(&out), 0, "{} --help", spec.name);
        let text = stdout(&out);
        assert!(text.contains("--config"), "{}: missing --config", spec.name);
        assert!(text.contains("--out"), "{}: missing --out", spec.name);
        for key in spec.keys {
            assert!(text.contains(&format!("--{}", key.name)), "{}: missing --{}", spec.name, key.name);
            let marker = match key.default {
                None => "[required]".to_string(),
                Some("") => "[optional]".to_string(),
                Some(d) => format!("[default: {d}]"),
            };
            // The help section for this key must carry its marker.
            let section = text.split(&format!("--{} ", key.name)).nth(1).unwrap_or("");
            let line = section.lines().next().unwrap_or("");
            assert!(line.contains(&marker), "{} --{}: expected {marker} in {line:?}", spec.name, key.name);
        }
    }
}

#[test]
fn top_level_help_and_version_exit_zero() {
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    for spec in SPECS {
        assert!(stdout(&out).contains(spec.name), "help missing {}", spec.name);
    }
    let out = run(&["--version"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn unknown_flag_is_named_and_exits_one() {
    let out = run(&["train", "--tasks", "x.jsonl", "--bogus-flag", "3"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--bogus-flag"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_subcommand_exits_one() {
    let out = run(&["frobnicate"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("frobnicate"));
}

#[test]
fn unknown_config_key_is_named_with_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seed=1\nbogus_key=2\n").unwrap();
    let out = run(&["gen-tasks", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("unknown key 'bogus_key' for 'gen-tasks'"), "stderr: {err}");
    assert!(err.contains(":2:"), "stderr should name line 2: {err}");
}

#[test]
fn malformed_config_line_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seed 1\n").unwrap();
    let out = run(&["gen-tasks", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("expected key=value"), "stderr: {}", stderr(&out));
}

#[test]
fn missing_dataset_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--tasks", "/definitely/not/here.jsonl", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("error: invalid usage"), "stderr: {}", stderr(&out));
}

#[test]
fn runtime_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = gen_tasks(dir.path(), 8, 11);
    // beta = 0 on an untrained policy: every group scores identically, so
    // no step can be taken and the run fails at runtime, not validation.
    let out = run(&[
        "train",
        "--tasks",
        tasks.to_str().unwrap(),
        "--beta",
        "0",
        "--steps",
        "2",
        "--group-size",
        "4",
        "--prompts-per-step",
        "2",
        "--max-new-tokens",
        "6",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("error: run failed"), "stderr: {}", stderr(&out));
}

#[test]
fn success_writes_outputs_snapshot_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("g");
    let out = run(&["gen-tasks", "--count", "7", "--seed", "3", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let tasks = fs::read_to_string(out_dir.join("tasks.jsonl")).unwrap();
    assert_eq!(tasks.lines().count(), 7);
    let snapshot = fs::read_to_string(out_dir.join("resolved.cfg")).unwrap();
    assert!(snapshot.contains("# command=gen-tasks"));
    assert!(snapshot.contains("count=7"));
    assert!(snapshot.contains("seed=3"));
    let meta = fs::read_to_string(out_dir.join("run_meta.txt")).unwrap();
    assert!(meta.contains("seed=3"));
    assert!(meta.contains("git_describe="));
}

#[test]
fn flags_override_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.cfg");
    fs::write(&cfg, "count=5\nseed=3\n").unwrap();
    let out_dir = dir.path().join("g");
    let out = run(&[
        "gen-tasks",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let snapshot = fs::read_to_string(out_dir.join("resolved.cfg")).unwrap();
    assert!(snapshot.contains("count=5"), "file value kept: {snapshot}");
    assert!(snapshot.contains("seed=9"), "flag wins: {snapshot}");
    assert!(snapshot.contains("difficulty-min=1"), "default kept: {snapshot}");
    let tasks = fs::read_to_string(out_dir.join("tasks.jsonl")).unwrap();
    assert_eq!(tasks.lines().count(), 5);
}

#[test]
fn out_root_env_is_the_default_destination() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["gen-tasks", "--count", "3", "--seed", "1"])
        .env("CIB_OUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("gen-tasks").join("tasks.jsonl").exists());
}

#[test]
fn mi_check_prints_a_summary_table_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["mi-check", "--audits", "5", "--seed", "7", "--out", dir.path().join("m").to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    for check in ["minimality_bound_slack", "sufficiency_bound_slack", "chain_rule_gap"] {
        assert!(text.contains(check), "table missing {check}: {text}");
    }
    let csv = fs::read_to_string(dir.path().join("m").join("mi_check.csv")).unwrap();
    assert!(csv.starts_with("check,audits,worst,tol,holds"), "{csv}");
}
