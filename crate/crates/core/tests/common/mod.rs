#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use halo_core::engine::{run_query, RunFailure, RunReport};
use halo_core::gateway::{Gateway, ScriptedBackend};
use halo_core::{EngineConfig, WorkflowTrace};
use serde::Deserialize;

pub const FIXTURES: [&str; 3] = ["planner_stop", "early_consensus", "budget_exhausted"];

/// Set to regenerate the golden trace files instead of comparing against them.
pub const BLESS_ENV: &str = "HALO_BLESS";

const MASK: &str = "<masked>";

#[derive(Deserialize)]
pub struct Fixture {
    pub query: String,
    pub config: serde_json::Value,
    pub script: BTreeMap<String, Vec<String>>,
}

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn load_fixture(name: &str) -> Fixture {
    let path = fixture_dir().join(format!("{name}.json"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

impl Fixture {
    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig::from_json(&self.config.to_string()).expect("fixture config is valid")
    }

    pub fn run_with(&self, config: &EngineConfig) -> Result<RunReport, RunFailure> {
        let gateway = Gateway::new(Arc::new(ScriptedBackend::new(self.script.clone())), config.decoding());
        run_query(config, &gateway, &self.query)
    }

    pub fn run(&self) -> Result<RunReport, RunFailure> {
        self.run_with(&self.engine_config())
    }
}

/// Pretty JSON with the per-run identifiers and timestamp replaced.
pub fn masked_json(trace: &WorkflowTrace) -> String {
    let mut t = trace.clone();
    t.run_id = MASK.into();
    t.created_at = MASK.into();
    if let Some(o) = t.outcome.as_mut() {
        o.trace_ref = MASK.into();
    }
    t.to_json_pretty() + "\n"
}

/// Compares the masked trace with the stored golden file, or rewrites it when
/// `HALO_BLESS` is set. Returns a description of the first differing line.
pub fn check_golden(name: &str, trace: &WorkflowTrace) -> Result<(), String> {
    let path = fixture_dir().join(format!("{name}.trace.json"));
    let actual = masked_json(trace);
    if std::env::var_os(BLESS_ENV).is_some() {
        std::fs::write(&path, &actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        return Ok(());
    }
    let line = expected.lines().zip(actual.lines()).position(|(a, b)| a != b).unwrap_or(expected.lines().count().min(actual.lines().count()));
    Err(format!("{name}: trace differs from golden file at line {}", line + 1))
}
