use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use halo_core::eval::{
    grade_code, run_bench, stratified_sample, BenchOptions, BenchmarkItem, CodeVerdict, EvalError, SampleSpec, ShimClient,
};
use halo_core::gateway::{Gateway, ScriptedBackend};
use halo_core::{EngineConfig, TaskKind};

const TESTS: &str = "def check(f):\n    assert f(2, 3) == 5\n    assert f(-1, 1) == 0\n";

fn fake_shim(mode: &str) -> ShimClient {
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fake_shim.py");
    ShimClient::new(vec![
        "env".into(),
        format!("HALO_FAKE_SHIM_MODE={mode}"),
        "python3".into(),
        script.to_string_lossy().into_owned(),
    ])
    .unwrap()
}

fn python_available() -> bool {
    std::process::Command::new("python3").arg("--version").output().is_ok()
}

#[test]
fn reference_solution_passes() {
    if !python_available() {
        eprintln!("python3 not found; skipping");
        return;
    }
    let shim = fake_shim("");
    let answer = "Here it is:\n```python\ndef add(a, b):\n    return a + b\n```";
    assert_eq!(grade_code(&shim, answer, TESTS, "add", 5.0).unwrap(), CodeVerdict::Pass);
    let wrong = "```python\ndef add(a, b):\n    return a - b\n```";
    assert_eq!(grade_code(&shim, wrong, TESTS, "add", 5.0).unwrap(), CodeVerdict::Fail);
}

#[test]
fn crash_and_timeout() {
    if !python_available() {
        return;
    }
    let shim = fake_shim("");
    let crash = "```python\nraise RuntimeError('boom')\n```";
    assert_eq!(grade_code(&shim, crash, TESTS, "add", 5.0).unwrap(), CodeVerdict::Error);
    let spin = "```python\ndef add(a, b):\n    while True:\n        pass\n```";
    let started = Instant::now();
    assert_eq!(grade_code(&shim, spin, TESTS, "add", 2.0).unwrap(), CodeVerdict::Timeout);
    assert!(started.elapsed() < Duration::from_secs(4));
    assert_eq!(grade_code(&shim, "   ", TESTS, "add", 2.0).unwrap(), CodeVerdict::Error);
}

#[test]
fn hung_shim_is_killed_after_grace() {
    if !python_available() {
        return;
    }
    let shim = fake_shim("hang");
    let started = Instant::now();
    let verdict = grade_code(&shim, "def add(a, b): return a + b", TESTS, "add", 0.5).unwrap();
    let elapsed = started.elapsed();
    assert_eq!(verdict, CodeVerdict::Timeout);
    assert!(elapsed >= Duration::from_millis(2400), "{elapsed:?}");
    assert!(elapsed < Duration::from_secs(5), "{elapsed:?}");
}

#[test]
fn protocol_errors() {
    if !python_available() {
        return;
    }
    let err = grade_code(&fake_shim("garbage"), "def add(a, b): return a + b", TESTS, "add", 1.0).unwrap_err();
    assert!(matches!(err, EvalError::Shim(_)), "{err}");
    let missing = ShimClient::new(vec!["/nonexistent/shim".into()]).unwrap();
    assert!(matches!(grade_code(&missing, "x = 1", TESTS, "add", 1.0), Err(EvalError::ShimUnavailable(_))));
}

fn choice_item(i: usize, gold: &str) -> BenchmarkItem {
    BenchmarkItem {
        id: format!("q{i}"),
        kind: TaskKind::Choice,
        prompt: format!("Question {i}? (A) w (B) x (C) y (D) z"),
        reference: gold.into(),
        stratum: if i.is_multiple_of(2) { "even".into() } else { "odd".into() },
        entry_point: None,
    }
}

/// Single-role, immediately successful script whose agent answers `letter`.
fn script_answering(letter: &str) -> BTreeMap<String, Vec<String>> {
    let mut s = BTreeMap::new();
    let mut put = |k: &str, v: &[&str]| {
        s.insert(k.to_string(), v.iter().map(|x| x.to_string()).collect());
    };
    put("planner", &["Pick the option.", "stop"]);
    put("role_designer", &[r#"{"roles":[{"role_name":"solver","system_prompt":"Answer.","rationale":"r"}]}"#]);
    let answer = format!("FINAL ANSWER: {letter}");
    put("solver", &[answer.as_str()]);
    put("judge", &["success"]);
    put("scorer", &[r#"{"score":0.8}"#]);
    s
}

#[test]
fn bench_over_scripted_items() {
    let items: Vec<BenchmarkItem> = (0..6).map(|i| choice_item(i, "b")).collect();
    let mut config = EngineConfig::default();
    config.ablations.no_refine = true;
    config.budgets.mcts_iterations = 2;
    let make = |item: &BenchmarkItem| {
        // Items q0..q3 answer B, the rest answer C.
        let letter = if item.id.as_str() < "q4" { "B" } else { "C" };
        Gateway::new(Arc::new(ScriptedBackend::new(script_answering(letter))), config.decoding())
    };
    let options = BenchOptions { parallelism: 3, shim: None, code_timeout_s: 10.0 };
    let report = run_bench(&items, &config, make, &options).unwrap();
    assert_eq!(report.metric_name, "accuracy");
    assert_eq!(report.metric_value, 66.7);
    assert_eq!(report.per_stratum["even"], 66.7);
    assert_eq!(report.per_stratum["odd"], 66.7);
    let ids: Vec<&str> = report.per_item.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["q0", "q1", "q2", "q3", "q4", "q5"]);
}

#[test]
fn bench_engine_error_counts_as_incorrect() {
    let items = vec![choice_item(0, "a")];
    let mut config = EngineConfig::default();
    config.ablations.no_refine = true;
    let make = |_: &BenchmarkItem| Gateway::new(Arc::new(ScriptedBackend::new(BTreeMap::new())), config.decoding());
    let options = BenchOptions { parallelism: 1, shim: None, code_timeout_s: 10.0 };
    let report = run_bench(&items, &config, make, &options).unwrap();
    assert_eq!(report.metric_value, 0.0);
    assert!(report.per_item[0].error.is_some());
}

#[test]
fn sample_then_bench_is_deterministic() {
    let items: Vec<BenchmarkItem> = (0..40).map(|i| choice_item(i, "a")).collect();
    let a = stratified_sample(&items, SampleSpec::Fraction(0.25), 3).unwrap();
    let b = stratified_sample(&items, SampleSpec::Fraction(0.25), 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 10);
    assert_eq!(a.iter().filter(|i| i.stratum == "even").count(), 5);
}
