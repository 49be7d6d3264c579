use std::collections::BTreeMap;

use super::shim::{CodeVerdict, ExecRequest, ShimClient};
use super::{BenchmarkItem, EvalError, EvalReport, ItemResult};
use crate::model::{normalize_answer, TaskKind};

/// True when the normalized prediction starts with the gold letter and the
/// letter is not followed by another letter or digit. One opening bracket in
/// front of the letter is allowed, as in `(b) mars`.
pub fn grade_choice(predicted: &str, gold: &str) -> bool {
    let gold = gold.trim().to_lowercase();
    if !matches!(gold.as_str(), "a" | "b" | "c" | "d") {
        return false;
    }
    let p = normalize_answer(predicted, TaskKind::Choice);
    let p = p.strip_prefix(['(', '[']).unwrap_or(&p);
    match p.strip_prefix(gold.as_str()) {
        Some(rest) => rest.chars().next().is_none_or(|c| !c.is_alphanumeric()),
        None => false,
    }
}

/// String equality after math normalization; no symbolic equivalence.
pub fn grade_math(predicted: &str, gold: &str) -> bool {
    normalize_answer(predicted, TaskKind::Math) == normalize_answer(gold, TaskKind::Math)
}

/// Runs the extracted solution against the unit tests through the shim.
pub fn grade_code(
    shim: &ShimClient,
    predicted: &str,
    test_source: &str,
    entry_point: &str,
    timeout_s: f64,
) -> Result<CodeVerdict, EvalError> {
    let solution = normalize_answer(predicted, TaskKind::Code);
    if solution.is_empty() {
        return Ok(CodeVerdict::Error);
    }
    let request = ExecRequest {
        solution_source: solution,
        test_source: test_source.to_string(),
        entry_point: entry_point.to_string(),
        timeout_s,
    };
    let result = shim.run(&request)?;
    if result.status != CodeVerdict::Pass {
        log::debug!("code item {entry_point}: {:?} {}", result.status, result.detail);
    }
    Ok(result.status)
}

/// Grades one prediction by item kind. Code items need a shim.
pub fn grade_item(item: &BenchmarkItem, predicted: &str, shim: Option<&ShimClient>, timeout_s: f64) -> Result<bool, EvalError> {
    match item.kind {
        TaskKind::Choice => Ok(grade_choice(predicted, &item.reference)),
        TaskKind::Math => Ok(grade_math(predicted, &item.reference)),
        TaskKind::Code => {
            let shim = shim.ok_or_else(|| EvalError::ShimUnavailable("no shim command configured".into()))?;
            let entry = item.entry_point.as_deref().unwrap_or_default();
            Ok(grade_code(shim, predicted, &item.reference, entry, timeout_s)? == CodeVerdict::Pass)
        }
    }
}

pub fn metric_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Code => "pass@1",
        TaskKind::Choice | TaskKind::Math => "accuracy",
    }
}

/// `100 * correct / total` rounded half-up to one decimal, in exact integer arithmetic.
pub fn percent_one_decimal(correct: usize, total: usize) -> f64 {
    assert!(total > 0, "percentage of an empty set");
    let tenths = (2000 * correct as u128 + total as u128) / (2 * total as u128);
    tenths as f64 / 10.0
}

/// Overall and per-stratum percentages. Rows are ordered by id, so the report
/// does not depend on the order rows arrive in.
pub fn compute_metric(rows: &[ItemResult], metric_name: &str) -> Result<EvalReport, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let mut per_item = rows.to_vec();
    per_item.sort_by(|a, b| a.id.cmp(&b.id));
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for row in &per_item {
        let c = counts.entry(row.stratum.clone()).or_default();
        c.0 += row.correct as usize;
        c.1 += 1;
    }
    let correct = per_item.iter().filter(|r| r.correct).count();
    Ok(EvalReport {
        metric_name: metric_name.to_string(),
        metric_value: percent_one_decimal(correct, per_item.len()),
        per_stratum: counts.into_iter().map(|(k, (c, t))| (k, percent_one_decimal(c, t))).collect(),
        per_item,
    })
}
