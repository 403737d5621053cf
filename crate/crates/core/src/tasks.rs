//! Synthetic arithmetic task families with brute-force oracle solvers.
//!
//! Two families over the shared arithmetic vocabulary:
//!
//! - `mod_chain`: a chain of single-digit operands joined by `+`, `-`, `*`
//!   followed by `mod 10`, e.g. `3+4*2mod10`. Difficulty is the operand
//!   count; `*` binds tighter than `+`/`-` and the final answer is reduced
//!   into `0..=9`.
//! - `multi_add`: the sum of two `d`-digit numbers, e.g. `47+58`.
//!   Difficulty is the digit count.
//!
//! Gold answers are always produced by [`oracle_solve`] parsing the prompt
//! tokens, so generation and checking share one arithmetic path. Answers
//! are canonical decimal strings (no leading zeros; plain `0` for zero).

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamRng;
use crate::vocab::{TokenId, TokenSeq, Vocab};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("unknown task family {0:?}")]
    UnknownFamily(String),
    #[error("difficulty range {min}..={max} is empty or zero-based")]
    BadDifficulty { min: usize, max: usize },
    #[error("dataset spec requests zero tasks")]
    EmptyCount,
    #[error("dataset spec lists no families")]
    NoFamilies,
    #[error("parse error at token {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("prompt decodes outside the task vocabulary: {0}")]
    Vocab(#[from] crate::vocab::VocabError),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Task family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    ModChain,
    MultiAdd,
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskFamily::ModChain => write!(f, "mod_chain"),
            TaskFamily::MultiAdd => write!(f, "multi_add"),
        }
    }
}

impl FromStr for TaskFamily {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, TaskError> {
        match s {
            "mod_chain" => Ok(TaskFamily::ModChain),
            "multi_add" => Ok(TaskFamily::MultiAdd),
            other => Err(TaskError::UnknownFamily(other.to_string())),
        }
    }
}

/// One task: a prompt to condition on and the canonical gold answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskInstance {
    pub id: u64,
    pub family: TaskFamily,
    pub difficulty: usize,
    /// `<bos>` followed by the expression tokens; never contains the
    /// answer delimiter or EOS.
    pub prompt: TokenSeq,
    /// Canonical decimal answer tokens (non-empty, no leading zeros).
    pub gold: TokenSeq,
    pub seed: u64,
}

///// What to generate: family mix, difficulty range, count, seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDatasetSpec {
    pub families: Vec<TaskFamily>,
    pub difficulty_min: usize,
    pub difficulty_max: usize,
    pub count: usize,
    pub seed: u64,
}

/// Number of distinct prompts a family admits at a difficulty, used to
/// check that difficulty strictly enlarges the prompt space.
pub fn prompt_space_size(family: TaskFamily, difficulty: usize) -> u128 {
    match family {
        // d single-digit operands and d-1 operators from {+,-,*}.
        TaskFamily::ModChain => 10u128.pow(difficulty as u32) * 3u128.pow(difficulty as u32 - 1),
        // Two d-digit numbers; leading digit nonzero for d >= 2.
        TaskFamily::MultiAdd => {
            let per = if difficulty == 1 { 10u128 } else { 9 * 10u128.pow(difficulty as u32 - 1) };
            per * per
        }
    }
}

/// Deterministically generate `spec.count` tasks. Instance `i` draws from
/// the stream `seed -> "tasks" -> i`, so datasets are reproducible and
/// insensitive to generation order.
pub fn generate(spec: &TaskDatasetSpec, vocab: &Vocab) -> Result<Vec<TaskInstance>, TaskError> {
    if spec.families.is_empty() {
        return Err(TaskError::NoFamilies);
    }
    if spec.count == 0 {
        return Err(TaskError::EmptyCount);
    }
    if spec.difficulty_min == 0 || spec.difficulty_min > spec.difficulty_max {
        return Err(TaskError::BadDifficulty { min: spec.difficulty_min, max: spec.difficulty_max });
    }
    let root = StreamRng::from_seed(spec.seed).split_str("tasks");
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = root.split(i as u64);
        let family = spec.families[rng.next_usize(spec.families.len())];
        let difficulty =
            spec.difficulty_min + rng.next_usize(spec.difficulty_max - spec.difficulty_min + 1);
        let text = match family {
            TaskFamily::ModChain => {
                let mut s = String::new();
                for j in 0..difficulty {
                    if j > 0 {
                        s.push(['+', '-', '*'][rng.next_usize(3)]);
                    }
                    s.push(char::from_digit(rng.next_usize(10) as u32, 10).unwrap());
                }
                s.push_str("mod10");
                s
            }
            TaskFamily::MultiAdd => {
                let draw = |rng: &mut StreamRng| {
                    let mut s = String::new();
                    for j in 0..difficulty {
                        let lo = if j == 0 && difficulty > 1 { 1 } else { 0 };
                        s.push(char::from_digit((lo + rng.next_usize(10 - lo)) as u32, 10).unwrap());
                    }
                    s
                };
                let a = draw(&mut rng);
                let b = draw(&mut rng);
                format!("{a}+{b}")
            }
        };
        let mut prompt = vec![vocab.bos_id()];
        prompt.extend(vocab.encode(&text)?);
        let gold = oracle_solve(vocab, family, &prompt)?;
        out.push(TaskInstance { id: i as u64, family, difficulty, prompt, gold, seed: spec.seed });
    }
    Ok(out)
}

/// Classified view of one prompt token.
enum Tok {
    Digit(i64),
    Plus,
    Minus,
    Star,
    Mod,
}

fn classify(vocab: &Vocab, id: TokenId) -> Result<Tok, String> {
    let sym = vocab.symbol(id).map_err(|e| e.to_string())?;
    match sym {
        "+" => Ok(Tok::Plus),
        "-" => Ok(Tok::Minus),
        "*" => Ok(Tok::Star),
        "mod" => Ok(Tok::Mod),
        s => match s.parse::<i64>() {
            Ok(d) if (0..10).contains(&d) && s.len() == 1 => Ok(Tok::Digit(d)),
            _ => Err(format!("unexpected symbol {s:?}")),
        },
    }
}

/// Solve a task prompt by brute-force parsing and exact integer arithmetic.
///
/// Parse errors report the index of the offending token, counted over the
/// expression tokens (a leading BOS, if present, is skipped and not
/// counted).
pub fn oracle_solve(
    vocab: &Vocab,
    family: TaskFamily,
    prompt: &[TokenId],
) -> Result<TokenSeq, TaskError> {
    let body =
        if prompt.first() == Some(&vocab.bos_id()) { &prompt[1..] } else { prompt };
    let toks: Vec<Tok> = body
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            classify(vocab, id).map_err(|message| TaskError::Parse { position: i, message })
        })
        .collect::<Result<_, _>>()?;
    let value = match family {
        TaskFamily::ModChain => solve_mod_chain(&toks)?,
        TaskFamily::MultiAdd => solve_multi_add(&toks)?,
    };
    let glyphs = value.to_string();
    vocab.encode(&glyphs).map_err(TaskError::Vocab)
}

/// Convenience wrapper solving an existing instance's prompt.
pub fn oracle_solve_task(vocab: &Vocab, task: &TaskInstance) -> Result<TokenSeq, TaskError> {
    oracle_solve(vocab, task.family, &task.prompt)
}

fn parse_err(position: usize, message: &str) -> TaskError {
    TaskError::Parse { position, message: message.to_string() }
}

/// digit ((+|-|*) digit)* mod digit+  with `*` before `+`/`-`, then a
/// mathematical mod into `0..modulus`.
fn solve_mod_chain(toks: &[Tok]) -> Result<i64, TaskError> {
    let mut pos = 0;
    let next_digit = |pos: &mut usize| -> Result<i64, TaskError> {
        match toks.get(*pos) {
            Some(Tok::Digit(d)) => {
                *pos += 1;
                Ok(*d)
            }
            Some(_) => Err(parse_err(*pos, "expected a digit")),
            None => Err(parse_err(*pos, "expected a digit, found end of prompt")),
        }
    };
    // Sum of products: fold `*` runs immediately, defer +/-.
    let mut total = 0i64;
    let mut term = next_digit(&mut pos)?;
    let mut term_sign = 1i64;
    loop {
        match toks.get(pos) {
            Some(Tok::Star) => {
                pos += 1;
                term *= next_digit(&mut pos)?;
            }
            Some(Tok::Plus) | Some(Tok::Minus) => {
                let negative = matches!(toks[pos], Tok::Minus);
                pos += 1;
                total += term_sign * term;
                term_sign = if negative { -1 } else { 1 };
                term = next_digit(&mut pos)?;
            }
            Some(Tok::Mod) => {
                pos += 1;
                total += term_sign * term;
                break;
            }
            Some(_) => return Err(parse_err(pos, "expected an operator or mod")),
            None => return Err(parse_err(pos, "expected mod, found end of prompt")),
        }
    }
    // Modulus: canonical multi-digit number.
    let start = pos;
    let mut modulus = 0i64;
    while let Some(Tok::Digit(d)) = toks.get(pos) {
        modulus = modulus * 10 + d;
        pos += 1;
    }
    if pos == start {
        return Err(parse_err(pos, "expected a modulus after mod"));
    }
    if pos != toks.len() {
        return Err(parse_err(pos, "trailing tokens after modulus"));
    }
    if modulus <= 0 {
        return Err(parse_err(start, "modulus must be positive"));
    }
    Ok(total.rem_euclid(modulus))
}

/// digit+ '+' digit+
fn solve_multi_add(toks: &[Tok]) -> Result<i64, TaskError> {
    let mut pos = 0;
    let number = |pos: &mut usize| -> Result<i64, TaskError> {
        let start = *pos;
        let mut value = 0i64;
        while let Some(Tok::Digit(d)) = toks.get(*pos) {
            value = value * 10 + d;
            *pos += 1;
        }
        if *pos == start {
            return Err(parse_err(*pos, "expected a number"));
        }
        Ok(value)
    };
    let a = number(&mut pos)?;
    match toks.get(pos) {
        Some(Tok::Plus) => pos += 1,
        _ => return Err(parse_err(pos, "expected +")),
    }
    let b = number(&mut pos)?;
    if pos != toks.len() {
        return Err(parse_err(pos, "trailing tokens after sum"));
    }
    Ok(a + b)
}

// ---------------------------------------------------------------------------
// JSONL persistence
// ---------------------------------------------------------------------------

/// Wire format for one task line; field order fixed for byte-stable output.
#[derive(Debug, Serialize, Deserialize)]
struct TaskRecord {
    id: u64,
    family: TaskFamily,
    difficulty: usize,
    prompt_ids: TokenSeq,
    gold_ids: TokenSeq,
    seed: u64,
    vocab_hash: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gold_text: Option<String>,
}

/// Write tasks as JSONL, embedding the vocabulary fingerprint per record.
pub fn write_tasks<W: Write>(
    mut out: W,
    tasks: &[TaskInstance],
    vocab: &Vocab,
) -> Result<(), TaskError> {
    let hash = vocab.hash();
    for t in tasks {
        let record = TaskRecord {
            id: t.id,
            family: t.family,
            difficulty: t.difficulty,
            prompt_ids: t.prompt.clone(),
            gold_ids: t.gold.clone(),
            seed: t.seed,
            vocab_hash: hash,
            prompt_text: vocab.decode(&t.prompt[1..]).ok(),
            gold_text: vocab.decode(&t.gold).ok(),
        };
        let line =
            serde_json::to_string(&record).map_err(|source| TaskError::Json { line: 0, source })?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a task JSONL file, validating structure. Returns the tasks and the
/// vocabulary fingerprint they were generated under.
pub fn read_tasks<R: BufRead>(reader: R) -> Result<(Vec<TaskInstance>, u64), TaskError> {
    let mut tasks = Vec::new();
    let mut hash: Option<u64> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TaskRecord = serde_json::from_str(&line)
            .map_err(|source| TaskError::Json { line: line_no, source })?;
        match hash {
            None => hash = Some(record.vocab_hash),
            Some(h) if h != record.vocab_hash => {
                return Err(TaskError::Schema {
                    line: line_no,
                    message: "mixed vocab_hash values in one task file".into(),
                })
            }
            _ => {}
        }
        if record.prompt_ids.is_empty() {
            return Err(TaskError::Schema { line: line_no, message: "empty prompt".into() });
        }
        if record.gold_ids.is_empty() {
            return Err(TaskError::Schema { line: line_no, message: "empty gold answer".into() });
        }
        tasks.push(TaskInstance {
            id: record.id,
            family: record.family,
            difficulty: record.difficulty,
            prompt: record.prompt_ids,
            gold: record.gold_ids,
            seed: record.seed,
        });
    }
    let hash = hash.ok_or(TaskError::Schema { line: 0, message: "empty task file".into() })?;
    Ok((tasks, hash))
}
