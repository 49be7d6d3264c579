//! Engine configuration: one JSON document, validated on load.
//!
//! The API key is never part of the config; the live backend reads it from
//! the `HALO_API_KEY` environment variable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{Decoding, DEFAULT_MAX_TOKENS, DEFAULT_SEED, DEFAULT_TEMPERATURE};
use crate::model::TaskKind;
use crate::reasoning::{ReasoningOptions, RunBudget};
use crate::search::{ImpactFactors, SearchConfig, DEFAULT_ALPHA};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Pass the raw query straight to the planner, skipping refinement.
    pub no_refine: bool,
    /// Treat the whole query as one subtask; the planner is never called.
    pub single_step: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tools {
    pub code_interpreter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Command that starts the code-execution shim, e.g. `["python3", "shim.py"]`.
    pub shim_command: Vec<String>,
    pub code_timeout_s: f64,
    pub parallelism: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { shim_command: vec!["halo-shim".into()], code_timeout_s: 10.0, parallelism: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub model_name: String,
    pub base_url: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: i64,
    pub alpha: f64,
    pub lambda_success: f64,
    pub lambda_fail: f64,
    pub lambda_continue: f64,
    pub budgets: RunBudget,
    pub ablations: Ablations,
    pub tools: Tools,
    pub task_kind: TaskKind,
    /// Directory traces are written to; not part of the trace's config snapshot.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_dir: Option<PathBuf>,
    pub eval: EvalSettings,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let impact = ImpactFactors::default();
        Self {
            model_name: "gpt-4o".into(),
            base_url: "https://api.openai.com".into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: DEFAULT_SEED,
            alpha: DEFAULT_ALPHA,
            lambda_success: impact.success,
            lambda_fail: impact.fail,
            lambda_continue: impact.cont,
            budgets: RunBudget::default(),
            ablations: Ablations::default(),
            tools: Tools::default(),
            task_kind: TaskKind::Math,
            trace_dir: None,
            eval: EvalSettings::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.model_name.trim().is_empty() {
            return bad("model_name must not be empty".into());
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad(format!("base_url must be an http(s) URL, got {:?}", self.base_url));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature must be in [0, 2], got {}", self.temperature));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be >= 1".into());
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be a positive number, got {}", self.alpha));
        }
        for (name, v) in [
            ("lambda_success", self.lambda_success),
            ("lambda_fail", self.lambda_fail),
            ("lambda_continue", self.lambda_continue),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        self.budgets.validate().map_err(ConfigError::Invalid)?;
        if !(self.eval.code_timeout_s.is_finite() && self.eval.code_timeout_s > 0.0) {
            return bad("eval.code_timeout_s must be > 0".into());
        }
        if self.eval.parallelism == 0 {
            return bad("eval.parallelism must be >= 1".into());
        }
        Ok(())
    }

    /// Sets one field by dotted path, e.g. `budgets.max-subtasks` or
    /// `ablations.no_refine`. Dashes and underscores are interchangeable. The
    /// value is read as JSON when it parses, otherwise as a string.
    pub fn set_dotted(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        let parts: Vec<String> = key.split('.').map(|p| p.replace('-', "_")).collect();
        let mut slot = &mut root;
        for (i, part) in parts.iter().enumerate() {
            let Value::Object(map) = slot else {
                return Err(ConfigError::UnknownKey(key.into()));
            };
            let last = i + 1 == parts.len();
            if !map.contains_key(part.as_str()) && !(last && part == "trace_dir") {
                return Err(ConfigError::UnknownKey(key.into()));
            }
            slot = map.entry(part.clone()).or_insert(Value::Null);
        }
        *slot = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.into()));
        let updated: Self = serde_json::from_value(root).map_err(|e| ConfigError::Parse(format!("{key}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn decoding(&self) -> Decoding {
        Decoding { temperature: self.temperature, max_tokens: self.max_tokens, seed: self.seed }
    }

    pub fn impact(&self) -> ImpactFactors {
        ImpactFactors { success: self.lambda_success, fail: self.lambda_fail, cont: self.lambda_continue }
    }

    pub fn reasoning_options(&self) -> ReasoningOptions {
        ReasoningOptions {
            budget: self.budgets,
            search: SearchConfig {
                alpha: self.alpha,
                impact: self.impact(),
                iterations: self.budgets.mcts_iterations,
                depth: self.budgets.simulation_depth,
                seed: self.seed,
            },
            task_kind: self.task_kind,
            single_step: self.ablations.single_step,
        }
    }
}
