//! End-to-end runs and their replay.
//!
//! [`run_query`] refines the query (unless disabled), runs the reasoning stack,
//! and persists a [`WorkflowTrace`] whether the run succeeds or not.
//! [`replay_trace`] re-executes a recorded run against its own call log and
//! reports the first point where the two disagree.

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Arc;

use thiserror::Error;

use crate::config::EngineConfig;
use crate::error::{EngineError, Result};
use crate::events::{EventSink, RunEvent, SubtaskSearch};
use crate::gateway::{Gateway, GatewayErrorKind, ReplayBackend};
use crate::model::{QueryBundle, TaskKind};
use crate::prompts::PROMPT_VERSION;
use crate::reasoning::{ReasoningStack, RunOutcome};
use crate::refinery::PromptRefinery;
use crate::search::BackpropRecord;
use crate::trace::{TraceError, WorkflowTrace, SCHEMA_VERSION};

/// Absolute tolerance when comparing replayed backprop values with recorded ones.
const REPLAY_TOLERANCE: f64 = 1e-12;

#[derive(Debug)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub trace: WorkflowTrace,
    pub trace_path: Option<PathBuf>,
}

/// A failed run still carries its (partial) trace.
#[derive(Debug)]
pub struct RunFailure {
    pub error: EngineError,
    pub trace: Box<WorkflowTrace>,
    pub trace_path: Option<PathBuf>,
}

struct Execution {
    result: Result<RunOutcome>,
    bundle: Option<QueryBundle>,
    events: Vec<RunEvent>,
}

fn execute(config: &EngineConfig, gateway: &Gateway, query: &str) -> Execution {
    let (tx, rx) = mpsc::channel();
    let mut bundle = None;
    let result = (|| {
        let b = if config.ablations.no_refine {
            QueryBundle::unrefined(query)
        } else {
            let tools = config.tools.code_interpreter && config.task_kind == TaskKind::Code;
            PromptRefinery::new(gateway, tools).refine(query)?
        };
        bundle = Some(b.clone());
        ReasoningStack::new(gateway, config.reasoning_options()).with_events(EventSink::new(tx)).run(&b)
    })();
    Execution { result, bundle, events: rx.try_iter().collect() }
}

fn searches(events: &[RunEvent]) -> Vec<SubtaskSearch> {
    events
        .iter()
        .filter_map(|e| match e {
            RunEvent::SearchFinished(s) => Some((**s).clone()),
            _ => None,
        })
        .collect()
}

fn backprops(events: &[RunEvent]) -> Vec<BackpropRecord> {
    events
        .iter()
        .filter_map(|e| match e {
            RunEvent::Backprop { record, .. } => Some(record.clone()),
            _ => None,
        })
        .collect()
}

/// Runs one query end to end and writes the trace to `config.trace_dir` when set.
/// The gateway's call log from this run is copied into the trace.
pub fn run_query(config: &EngineConfig, gateway: &Gateway, query: &str) -> std::result::Result<RunReport, RunFailure> {
    let first_call = gateway.call_count();
    let run_id = uuid::Uuid::new_v4().to_string();
    let created_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let mut snapshot = config.clone();
    snapshot.trace_dir = None;

    let exec = execute(config, gateway, query);
    let mut trace = WorkflowTrace {
        schema_version: SCHEMA_VERSION.into(),
        run_id: run_id.clone(),
        created_at,
        prompt_version: PROMPT_VERSION.into(),
        backend_id: gateway.backend_id().to_string(),
        config: snapshot,
        query: query.to_string(),
        bundle: exec.bundle,
        subtasks: searches(&exec.events),
        calls: gateway.calls().split_off(first_call),
        outcome: None,
        error: None,
    };
    let result = exec.result.map(|mut outcome| {
        outcome.trace_ref = run_id;
        outcome
    });
    match &result {
        Ok(outcome) => trace.outcome = Some(outcome.clone()),
        Err(e) => trace.error = Some(e.to_string()),
    }

    let mut trace_path = None;
    let mut error = result.as_ref().err().cloned();
    if let Some(dir) = &config.trace_dir {
        match trace.save_in(dir) {
            Ok(path) => {
                log::info!("trace written to {}", path.display());
                trace_path = Some(path);
            }
            Err(e) => {
                log::error!("{e}");
                error.get_or_insert(EngineError::Trace(e.to_string()));
            }
        }
    }
    match (result, error) {
        (Ok(outcome), None) => Ok(RunReport { outcome, trace, trace_path }),
        (_, Some(error)) => Err(RunFailure { error, trace: Box::new(trace), trace_path }),
        (Err(error), None) => Err(RunFailure { error, trace: Box::new(trace), trace_path }),
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("replay diverged at backprop record {index}: recorded {recorded}, replayed {replayed}")]
    BackpropDivergence { index: usize, recorded: String, replayed: String },
    #[error("replay diverged at call {call_index}: {detail}")]
    CallDivergence { call_index: usize, detail: String },
    #[error("replayed outcome differs in `{field}`: recorded {recorded}, replayed {replayed}")]
    OutcomeMismatch { field: &'static str, recorded: String, replayed: String },
    #[error("recorded run failed and replay reproduced it: {0}")]
    RecordedFailure(String),
    #[error("replay failed: {0}")]
    Engine(EngineError),
}

impl ReplayError {
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Self::BackpropDivergence { .. } | Self::CallDivergence { .. } | Self::OutcomeMismatch { .. }
        )
    }
}

fn same_record(a: &BackpropRecord, b: &BackpropRecord) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= REPLAY_TOLERANCE;
    a.node_id == b.node_id
        && a.n_before == b.n_before
        && a.n_after == b.n_after
        && close(a.v_before, b.v_before)
        && close(a.lambda, b.lambda)
        && close(a.v_after, b.v_after)
        && a.scores.len() == b.scores.len()
        && a.scores.iter().zip(&b.scores).all(|(x, y)| close(*x, *y))
}

fn describe(r: Option<&BackpropRecord>) -> String {
    r.map(to_json).unwrap_or_else(|| "nothing".into())
}

pub fn replay(path: &Path) -> std::result::Result<RunOutcome, ReplayError> {
    let trace = WorkflowTrace::load(path)?;
    replay_trace(&trace, &trace.config)
}

/// Re-executes the recorded query under `config`, answering every gateway call
/// from the trace's call log. Checks, in order: the backprop log, the call
/// sequence, then each outcome field.
pub fn replay_trace(trace: &WorkflowTrace, config: &EngineConfig) -> std::result::Result<RunOutcome, ReplayError> {
    let backend = Arc::new(ReplayBackend::new(trace.calls.clone()));
    let gateway = Gateway::new(backend.clone(), config.decoding());
    let exec = execute(config, &gateway, &trace.query);
    let finished = exec.result.is_ok() && trace.outcome.is_some();

    let recorded = trace.backprop_log();
    let replayed = backprops(&exec.events);
    let span = if finished { recorded.len().max(replayed.len()) } else { recorded.len().min(replayed.len()) };
    for index in 0..span {
        let (r, p) = (recorded.get(index), replayed.get(index));
        let same = matches!((r, p), (Some(r), Some(p)) if same_record(r, p));
        if !same {
            return Err(ReplayError::BackpropDivergence { index, recorded: describe(r), replayed: describe(p) });
        }
    }

    let mut outcome = match exec.result {
        Ok(outcome) => outcome,
        Err(EngineError::Gateway(g))
            if matches!(g.kind, GatewayErrorKind::ReplayDivergence | GatewayErrorKind::ScriptExhausted) =>
        {
            // A failed call is never logged, so a failed recording ends where it broke.
            if let (Some(msg), GatewayErrorKind::ScriptExhausted) = (&trace.error, g.kind) {
                if backend.consumed() == backend.total() {
                    return Err(ReplayError::RecordedFailure(msg.clone()));
                }
            }
            return Err(ReplayError::CallDivergence {
                call_index: g.call_index.unwrap_or(backend.consumed()),
                detail: g.detail,
            });
        }
        Err(e) => {
            return match &trace.error {
                Some(msg) if *msg == e.to_string() => Err(ReplayError::RecordedFailure(msg.clone())),
                _ => Err(ReplayError::Engine(e)),
            };
        }
    };
    if backend.consumed() != backend.total() {
        return Err(ReplayError::CallDivergence {
            call_index: backend.consumed(),
            detail: format!("replay finished after {} of {} recorded calls", backend.consumed(), backend.total()),
        });
    }

    let Some(expected) = &trace.outcome else {
        return Err(ReplayError::OutcomeMismatch {
            field: "outcome",
            recorded: trace.error.clone().unwrap_or_default(),
            replayed: "a completed run".into(),
        });
    };
    outcome.trace_ref = trace.run_id.clone();
    for (field, r, p) in [
        ("final_answer", to_json(&expected.final_answer), to_json(&outcome.final_answer)),
        ("stop_reason", to_json(&expected.stop_reason), to_json(&outcome.stop_reason)),
        ("history", to_json(&expected.history), to_json(&outcome.history)),
        ("trace_ref", to_json(&expected.trace_ref), to_json(&outcome.trace_ref)),
    ] {
        if r != p {
            return Err(ReplayError::OutcomeMismatch { field, recorded: r, replayed: p });
        }
    }
    Ok(outcome)
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("value serializes")
}
