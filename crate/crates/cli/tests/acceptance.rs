//! Determinism acceptance check: every subcommand, re-run from the
//! `resolved.cfg` snapshot it wrote (single worker), must reproduce its
//! primary output files byte for byte. Only `run_meta.txt` — the
//! timestamped run metadata — is exempt.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cib_cli::SPECS;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cib"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary spawns");
    assert_eq!(
        out.status.code(),
        Some(0),
        "cib {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// File names in `dir`, excluding the timestamped metadata.
fn primary_files(dir: &Path) -> BTreeSet<String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|name| name != "run_meta.txt")
        .collect()
}

/// Re-run a finished run directory from its own snapshot and compare
/// every primary output byte for byte. Returns the number of files
/// compared.
fn replay_matches(name: &str, dir: &Path) -> usize {
    let replay_dir = dir.with_file_name(format!(
        "{}_replay",
        dir.file_name().unwrap().to_str().unwrap()
    ));
    let cfg = dir.join("resolved.cfg");
    run_ok(&[name, "--config", cfg.to_str().unwrap(), "--out", replay_dir.to_str().unwrap()]);

    let originals = primary_files(dir);
    let replays = primary_files(&replay_dir);
    assert_eq!(originals, replays, "{name}: replay produced a different file set");
    for file in &originals {
        let a = fs::read(dir.join(file)).unwrap();
        let b = fs::read(replay_dir.join(file)).unwrap();
        assert_eq!(
            a, b,
            "{name}: {file} differs between the original run and its snapshot replay"
        );
    }
    originals.len()
}

#[test]
fn criterion_11_snapshot_replay_reproduces_outputs_byte_identically() {
    let root = tempfile::tempdir().unwrap();
    let dir = |name: &str| -> PathBuf { root.path().join(name) };
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();

    // One real run of every subcommand, chained on each other's outputs.
    let gen_dir = dir("gen");
    run_ok(&[
        "gen-tasks",
        "--count", "32",
        "--seed", "5",
        "--difficulty-min", "1",
        "--difficulty-max", "3",
        "--out", &s(&gen_dir),
    ]);
    let tasks = s(&gen_dir.join("tasks.jsonl"));

    let train_dir = dir("train");
    run_ok(&[
        "train",
        "--tasks", &tasks,
        "--beta", "0.005",
        "--steps", "5",
        "--group-size", "4",
        "--prompts-per-step", "2",
        "--max-new-tokens", "8",
        "--dump-samples", "20",
        "--seed", "1",
        "--out", &s(&train_dir),
    ]);
    let ckpt = s(&train_dir.join("ckpt_final.bin"));
    let samples = s(&train_dir.join("samples.jsonl"));

    let eval_dir = dir("eval");
    run_ok(&[
        "eval",
        "--ckpt", &ckpt,
        "--tasks", &tasks,
        "--k", "2",
        "--max-new-tokens", "8",
        "--seed", "2",
        "--out", &s(&eval_dir),
    ]);

    let score_dir = dir("score");
    run_ok(&["score", "--samples", &samples, "--beta", "0.01", "--out", &s(&score_dir)]);

    let profile_dir = dir("profile");
    run_ok(&[
        "profile",
        "--samples", &samples,
        "--prior", &format!("fit-ngram:{samples}:2:0.5"),
        "--bins", "5",
        "--corr-bins", "4",
        "--out", &s(&profile_dir),
    ]);

    let sweep_dir = dir("sweep");
    run_ok(&[
        "sweep",
        "--tasks", &tasks,
        "--betas", "0.005,0.02",
        "--steps", "3",
        "--group-size", "4",
        "--prompts-per-step", "2",
        "--max-new-tokens", "8",
        "--eval-k", "2",
        "--eval-max-new-tokens", "8",
        "--out", &s(&sweep_dir),
    ]);

    let mi_dir = dir("mi");
    run_ok(&["mi-check", "--audits", "30", "--seed", "7", "--out", &s(&mi_dir)]);

    let runs = [
        ("gen-tasks", gen_dir),
        ("train", train_dir),
        ("eval", eval_dir),
        ("score", score_dir),
        ("profile", profile_dir),
        ("sweep", sweep_dir),
        ("mi-check", mi_dir),
    ];
    // Every subcommand the binary exposes is replayed here.
    let covered: BTreeSet<&str> = runs.iter().map(|(n, _)| *n).collect();
    let all: BTreeSet<&str> = SPECS.iter().map(|s| s.name).collect();
    assert_eq!(covered, all, "replay coverage must include every subcommand");

    let mut files = 0;
    for (name, run_dir) in &runs {
        files += replay_matches(name, run_dir);
    }
    println!(
        "[criterion 11] PASS - all {} subcommands replayed from their resolved.cfg \
         snapshots; {files} output files byte-identical",
        runs.len()
    );
}
