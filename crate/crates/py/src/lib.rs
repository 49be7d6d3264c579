//! Python bindings: scoring and search arithmetic, answer normalization,
//! sampling and metrics, plus scripted end-to-end runs and trace replay.

use std::collections::BTreeMap;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use halo_core::engine::{replay_trace, run_query};
use halo_core::eval::{self, ItemResult, SampleSpec};
use halo_core::gateway::{self, Gateway, ScriptedBackend};
use halo_core::reasoning;
use halo_core::search;
use halo_core::{
    EngineConfig, ExecutionHistory, HistoryEntry, QualityScore, RunOutcome, Subtask, TaskKind, WorkflowTrace,
};

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn kind(name: &str) -> PyResult<TaskKind> {
    name.parse().map_err(value_error)
}

/// Engine configuration. Keys use the JSON config names; `set` also accepts
/// dotted paths such as `budgets.max_subtasks`.
#[pyclass(name = "Config", module = "halo", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: EngineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(text) => EngineConfig::from_json(text).map_err(value_error)?,
            None => EngineConfig::default(),
        };
        Ok(Self { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set_dotted(key, value).map_err(value_error)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!("Config({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

/// Outcome of one run, with the full trace as JSON.
#[pyclass(name = "RunResult", module = "halo", get_all)]
struct PyRunResult {
    final_answer: String,
    stop_reason: String,
    /// `(index, description, answer, score)` per completed subtask.
    history: Vec<(u32, String, String, f64)>,
    trace_json: String,
}

impl PyRunResult {
    fn new(outcome: &RunOutcome, trace_json: String) -> Self {
        Self {
            final_answer: outcome.final_answer.clone(),
            stop_reason: format!("{:?}", outcome.stop_reason),
            history: outcome
                .history
                .entries
                .iter()
                .map(|e| (e.subtask.index, e.subtask.description.clone(), e.answer.clone(), e.best_score.value()))
                .collect(),
            trace_json,
        }
    }
}

#[pymethods]
impl PyRunResult {
    fn __repr__(&self) -> String {
        format!("RunResult(final_answer={:?}, stop_reason={})", self.final_answer, self.stop_reason)
    }
}

/// Runs `query` end to end against scripted replies (routing key to reply list).
#[pyfunction]
#[pyo3(signature = (query, script, config = None))]
fn run_scripted(query: &str, script: BTreeMap<String, Vec<String>>, config: Option<PyConfig>) -> PyResult<PyRunResult> {
    let config = config.map(|c| c.inner).unwrap_or_default();
    let gateway = Gateway::new(Arc::new(ScriptedBackend::new(script)), config.decoding());
    match run_query(&config, &gateway, query) {
        Ok(report) => Ok(PyRunResult::new(&report.outcome, report.trace.to_json_pretty())),
        Err(failure) => Err(PyRuntimeError::new_err(failure.error.to_string())),
    }
}

/// Replays a trace (JSON text) against its own call log.
#[pyfunction]
#[pyo3(signature = (trace_json, config = None))]
fn replay(trace_json: &str, config: Option<PyConfig>) -> PyResult<PyRunResult> {
    let trace = WorkflowTrace::from_json(trace_json.as_bytes()).map_err(value_error)?;
    let config = config.map(|c| c.inner).unwrap_or_else(|| trace.config.clone());
    let outcome = replay_trace(&trace, &config).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(PyRunResult::new(&outcome, trace_json.to_string()))
}

#[pyfunction]
fn normalize_answer(raw: &str, task_kind: &str) -> PyResult<String> {
    Ok(halo_core::normalize_answer(raw, kind(task_kind)?))
}

#[pyfunction]
fn make_quality_score(x: f64) -> PyResult<f64> {
    halo_core::make_quality_score(x).map(QualityScore::value).map_err(value_error)
}

#[pyfunction]
fn uct_score(child_total: f64, child_visits: i64, parent_visits: i64, alpha: f64) -> PyResult<f64> {
    search::uct_score(child_total, child_visits, parent_visits, alpha).map_err(value_error)
}

/// One backprop update; `None` when a never-visited node receives no scores.
#[pyfunction]
fn updated_mean(v: f64, n: u64, impact: f64, scores: Vec<f64>) -> Option<(f64, u64)> {
    search::updated_mean(v, n, impact, &scores)
}

fn history(entries: &[(String, f64)]) -> PyResult<ExecutionHistory> {
    let mut h = ExecutionHistory::new();
    for (i, (answer, score)) in entries.iter().enumerate() {
        h.push(HistoryEntry {
            subtask: Subtask::new(i as u32 + 1, format!("subtask {}", i + 1)),
            answer: answer.clone(),
            best_score: QualityScore::new(*score).map_err(value_error)?,
        })
        .map_err(value_error)?;
    }
    Ok(h)
}

#[pyfunction]
fn should_stop_early(answers: Vec<String>, task_kind: &str) -> PyResult<bool> {
    let entries: Vec<(String, f64)> = answers.into_iter().map(|a| (a, 0.0)).collect();
    Ok(reasoning::should_stop_early(&history(&entries)?, kind(task_kind)?))
}

/// `entries` is a list of `(answer, score)` in subtask order.
#[pyfunction]
fn aggregate_final(entries: Vec<(String, f64)>, task_kind: &str) -> PyResult<String> {
    if entries.is_empty() {
        return Err(value_error("history is empty"));
    }
    Ok(reasoning::aggregate_final(&history(&entries)?, kind(task_kind)?))
}

#[pyfunction]
fn extract_json_block(text: &str) -> PyResult<String> {
    gateway::extract_json_block(text).map(|v| v.to_string()).map_err(value_error)
}

/// Indices of the sampled items, given each item's stratum.
#[pyfunction]
#[pyo3(signature = (strata, fraction = None, count = None, seed = 0))]
fn stratified_sample(strata: Vec<String>, fraction: Option<f64>, count: Option<usize>, seed: u64) -> PyResult<Vec<usize>> {
    let spec = match (fraction, count) {
        (Some(p), None) => SampleSpec::Fraction(p),
        (None, Some(n)) => SampleSpec::Count(n),
        _ => return Err(value_error("give exactly one of fraction or count")),
    };
    let items: Vec<eval::BenchmarkItem> = strata
        .into_iter()
        .enumerate()
        .map(|(i, stratum)| eval::BenchmarkItem {
            id: i.to_string(),
            kind: TaskKind::Choice,
            prompt: String::new(),
            reference: "a".into(),
            stratum,
            entry_point: None,
        })
        .collect();
    let sample = eval::stratified_sample(&items, spec, seed).map_err(value_error)?;
    Ok(sample.iter().map(|i| i.id.parse().expect("numeric id")).collect())
}

#[pyfunction]
fn grade_choice(predicted: &str, gold: &str) -> bool {
    eval::grade_choice(predicted, gold)
}

#[pyfunction]
fn grade_math(predicted: &str, gold: &str) -> bool {
    eval::grade_math(predicted, gold)
}

/// `rows` is a list of `(id, stratum, correct)`; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (rows, metric_name = "accuracy"))]
fn compute_metric(rows: Vec<(String, String, bool)>, metric_name: &str) -> PyResult<String> {
    let rows: Vec<ItemResult> = rows
        .into_iter()
        .map(|(id, stratum, correct)| ItemResult { id, stratum, predicted: String::new(), correct, runtime_s: 0.0, error: None })
        .collect();
    let report = eval::compute_metric(&rows, metric_name).map_err(value_error)?;
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

#[pymodule]
fn halo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run_scripted, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(make_quality_score, m)?)?;
    m.add_function(wrap_pyfunction!(uct_score, m)?)?;
    m.add_function(wrap_pyfunction!(updated_mean, m)?)?;
    m.add_function(wrap_pyfunction!(should_stop_early, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_final, m)?)?;
    m.add_function(wrap_pyfunction!(extract_json_block, m)?)?;
    m.add_function(wrap_pyfunction!(stratified_sample, m)?)?;
    m.add_function(wrap_pyfunction!(grade_choice, m)?)?;
    m.add_function(wrap_pyfunction!(grade_math, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metric, m)?)?;
    Ok(())
}
