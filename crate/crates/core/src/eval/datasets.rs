//! Loaders for the three benchmark layouts:
//!
//! * code: JSON lines of `{task_id, prompt, test, entry_point}`
//! * choice: a directory of per-subject CSV files without a header row,
//!   columns `question, A, B, C, D, answer`
//! * math: a directory tree of per-problem JSON files
//!   `{problem, level, type, solution}`; the gold answer is the last `\boxed{}`
//!   in the solution

use std::path::{Path, PathBuf};

use serde::Deserialize;
use walkdir::WalkDir;

use super::{BenchmarkItem, EvalError};
use crate::model::{last_boxed_content, TaskKind};

fn dataset_error(path: &Path, detail: impl ToString) -> EvalError {
    EvalError::Dataset { path: path.display().to_string(), detail: detail.to_string() }
}

#[derive(Deserialize)]
struct CodeRecord {
    task_id: String,
    prompt: String,
    test: String,
    entry_point: String,
}

pub fn load_code_jsonl(path: &Path) -> Result<Vec<BenchmarkItem>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| dataset_error(path, e))?;
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: CodeRecord = serde_json::from_str(line).map_err(|e| dataset_error(path, format!("line {}: {e}", n + 1)))?;
        if r.test.trim().is_empty() || r.entry_point.trim().is_empty() {
            return Err(dataset_error(path, format!("line {}: missing test source or entry point", n + 1)));
        }
        items.push(BenchmarkItem {
            id: r.task_id,
            kind: TaskKind::Code,
            prompt: r.prompt,
            reference: r.test,
            stratum: "code".into(),
            entry_point: Some(r.entry_point),
        });
    }
    Ok(items)
}

fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, EvalError> {
    let mut files = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| dataset_error(dir, e))?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == ext) {
            files.push(entry.into_path());
        }
    }
    if files.is_empty() {
        return Err(dataset_error(dir, format!("no .{ext} files found")));
    }
    Ok(files)
}

fn subject_of(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    for suffix in ["_test", "_dev", "_val"] {
        if let Some(s) = stem.strip_suffix(suffix) {
            return s.to_string();
        }
    }
    stem
}

pub fn load_choice_dir(dir: &Path) -> Result<Vec<BenchmarkItem>, EvalError> {
    let mut items = Vec::new();
    for path in files_with_extension(dir, "csv")? {
        let subject = subject_of(&path);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(&path)
            .map_err(|e| dataset_error(&path, e))?;
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| dataset_error(&path, e))?;
            if record.len() != 6 {
                return Err(dataset_error(&path, format!("row {}: expected 6 columns, got {}", row + 1, record.len())));
            }
            let answer = record[5].trim().to_lowercase();
            if !matches!(answer.as_str(), "a" | "b" | "c" | "d") {
                return Err(dataset_error(&path, format!("row {}: answer {:?} is not a letter A-D", row + 1, &record[5])));
            }
            let prompt = format!(
                "{}\n(A) {}\n(B) {}\n(C) {}\n(D) {}",
                record[0].trim(),
                record[1].trim(),
                record[2].trim(),
                record[3].trim(),
                record[4].trim()
            );
            items.push(BenchmarkItem {
                id: format!("{subject}/{}", row + 1),
                kind: TaskKind::Choice,
                prompt,
                reference: answer,
                stratum: subject.clone(),
                entry_point: None,
            });
        }
    }
    Ok(items)
}

#[derive(Deserialize)]
struct MathRecord {
    problem: String,
    level: String,
    #[serde(rename = "type")]
    subject: String,
    solution: String,
}

pub fn load_math_dir(dir: &Path) -> Result<Vec<BenchmarkItem>, EvalError> {
    let mut items = Vec::new();
    for path in files_with_extension(dir, "json")? {
        let text = std::fs::read_to_string(&path).map_err(|e| dataset_error(&path, e))?;
        let r: MathRecord = serde_json::from_str(&text).map_err(|e| dataset_error(&path, e))?;
        let Some(gold) = last_boxed_content(&r.solution) else {
            log::warn!("{}: no boxed answer in solution; skipped", path.display());
            continue;
        };
        let id = path.strip_prefix(dir).unwrap_or(&path).with_extension("").to_string_lossy().replace('\\', "/");
        items.push(BenchmarkItem {
            id,
            kind: TaskKind::Math,
            prompt: r.problem,
            reference: gold,
            stratum: format!("{}/{}", r.subject, r.level),
            entry_point: None,
        });
    }
    Ok(items)
}

pub fn load_dataset(kind: TaskKind, path: &Path) -> Result<Vec<BenchmarkItem>, EvalError> {
    match kind {
        TaskKind::Code => load_code_jsonl(path),
        TaskKind::Choice => load_choice_dir(path),
        TaskKind::Math => load_math_dir(path),
    }
}
