//! Shared domain types, score arithmetic, and answer normalization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("quality score must be a finite number in [0, 1], got {0}")]
    ScoreOutOfRange(f64),
    #[error("unknown status label {0:?} (expected success, fail or continue)")]
    UnknownStatus(String),
    #[error("field `{0}` must not be empty")]
    EmptyField(&'static str),
    #[error("malformed task representation line: {0:?}")]
    MalformedRepresentation(String),
    #[error("history entry for subtask {got} out of order (expected {expected})")]
    HistoryOrder { expected: u32, got: u32 },
}

/// Benchmark family an answer belongs to; selects the normalization rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Code,
    Choice,
    Math,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Code => "code",
            TaskKind::Choice => "choice",
            TaskKind::Math => "math",
        })
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "code" => Ok(TaskKind::Code),
            "choice" => Ok(TaskKind::Choice),
            "math" => Ok(TaskKind::Math),
            other => Err(format!("unknown task kind {other:?} (expected code, choice or math)")),
        }
    }
}

/// The (task type, core intent, key details) triplet extracted from a raw query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredTaskRepresentation {
    pub task_type: String,
    pub core_intent: String,
    pub key_details: Vec<String>,
}

impl StructuredTaskRepresentation {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.task_type.trim().is_empty() {
            return Err(ModelError::EmptyField("task_type"));
        }
        if self.core_intent.trim().is_empty() {
            return Err(ModelError::EmptyField("core_intent"));
        }
        if self.key_details.iter().all(|d| d.trim().is_empty()) {
            return Err(ModelError::EmptyField("key_details"));
        }
        Ok(())
    }

    /// Representation used when refinement is switched off: no parser agent runs,
    /// so the raw query stands in for both intent and details.
    pub fn passthrough(raw_query: &str) -> Self {
        let intent = raw_query
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or(raw_query)
            .to_string();
        Self {
            task_type: "unspecified".to_string(),
            core_intent: intent,
            key_details: vec![raw_query.trim().to_string()],
        }
    }

    /// Stable `key: value` text form, one line per field and one line per detail.
    /// Backslashes and newlines are escaped so the form parses back losslessly.
    pub fn to_kv_text(&self) -> String {
        let mut out = format!(
            "task_type: {}\ncore_intent: {}\n",
            escape_kv(&self.task_type),
            escape_kv(&self.core_intent)
        );
        for detail in &self.key_details {
            out.push_str("key_detail: ");
            out.push_str(&escape_kv(detail));
            out.push('\n');
        }
        out
    }

    pub fn from_kv_text(text: &str) -> Result<Self, ModelError> {
        let mut task_type = None;
        let mut core_intent = None;
        let mut key_details = Vec::new();
        for line in text.lines() {
            let (key, value) = line
                .split_once(": ")
                .ok_or_else(|| ModelError::MalformedRepresentation(line.to_string()))?;
            let value = unescape_kv(value)
                .ok_or_else(|| ModelError::MalformedRepresentation(line.to_string()))?;
            match key {
                "task_type" if task_type.is_none() => task_type = Some(value),
                "core_intent" if core_intent.is_none() => core_intent = Some(value),
                "key_detail" => key_details.push(value),
                _ => return Err(ModelError::MalformedRepresentation(line.to_string())),
            }
        }
        Ok(Self {
            task_type: task_type.ok_or(ModelError::EmptyField("task_type"))?,
            core_intent: core_intent.ok_or(ModelError::EmptyField("core_intent"))?,
            key_details,
        })
    }
}

fn escape_kv(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_kv(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next()? {
                '\\' => out.push('\\'),
                'n' => out.push('\n'),
                'r' => out.push('\r'),
                _ => return None,
            }
        } else {
            out.push(c);
        }
    }
    Some(out)
}

/// Raw query together with every intermediate prompt of the refinement chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBundle {
    pub raw_query: String,
    /// Absent when refinement is disabled.
    pub initial_template: Option<String>,
    /// Absent when refinement is disabled.
    pub optimized_prompt: Option<String>,
    pub refined_prompt: String,
    pub representation: StructuredTaskRepresentation,
}

impl QueryBundle {
    /// Bundle for a run with refinement disabled: the refined prompt is the raw query verbatim.
    pub fn unrefined(raw_query: &str) -> Self {
        Self {
            raw_query: raw_query.to_string(),
            initial_template: None,
            optimized_prompt: None,
            refined_prompt: raw_query.to_string(),
            representation: StructuredTaskRepresentation::passthrough(raw_query),
        }
    }

    pub fn is_refined(&self) -> bool {
        self.initial_template.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub index: u32,
    pub description: String,
    pub is_stop: bool,
}

impl Subtask {
    pub fn new(index: u32, description: impl Into<String>) -> Self {
        Self { index, description: description.into(), is_stop: false }
    }

    pub fn stop(index: u32) -> Self {
        Self { index, description: String::new(), is_stop: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub subtask: Subtask,
    pub answer: String,
    pub best_score: QualityScore,
}

/// Append-only record of completed subtasks, ordered by subtask index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionHistory {
    pub entries: Vec<HistoryEntry>,
}

impl ExecutionHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_index(&self) -> u32 {
        self.entries.len() as u32 + 1
    }

    pub fn push(&mut self, entry: HistoryEntry) -> Result<(), ModelError> {
        let expected = self.next_index();
        if entry.subtask.index != expected || entry.subtask.is_stop {
            return Err(ModelError::HistoryOrder { expected, got: entry.subtask.index });
        }
        self.entries.push(entry);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub role_name: String,
    pub system_prompt: String,
    #[serde(default)]
    pub rationale: String,
}

impl RoleSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.role_name.trim().is_empty() {
            return Err(ModelError::EmptyField("role_name"));
        }
        if self.system_prompt.trim().is_empty() {
            return Err(ModelError::EmptyField("system_prompt"));
        }
        Ok(())
    }
}

/// Verdict of the judging agent on one output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusLabel {
    Success,
    Fail,
    Continue,
}

impl StatusLabel {
    pub const ALL: [StatusLabel; 3] = [StatusLabel::Success, StatusLabel::Fail, StatusLabel::Continue];

    pub fn as_str(self) -> &'static str {
        match self {
            StatusLabel::Success => "success",
            StatusLabel::Fail => "fail",
            StatusLabel::Continue => "continue",
        }
    }

    /// Success and Fail end a rollout; Continue does not.
    pub fn is_final(self) -> bool {
        !matches!(self, StatusLabel::Continue)
    }
}

impl fmt::Display for StatusLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatusLabel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        StatusLabel::ALL
            .into_iter()
            .find(|l| t.eq_ignore_ascii_case(l.as_str()))
            .ok_or_else(|| ModelError::UnknownStatus(s.to_string()))
    }
}

/// A number in the closed unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QualityScore(f64);

impl QualityScore {
    pub const ZERO: QualityScore = QualityScore(0.0);

    pub fn new(x: f64) -> Result<Self, ModelError> {
        make_quality_score(x)
    }

    /// Clamps any finite value into [0, 1]; NaN maps to 0.
    pub fn clamped(x: f64) -> Self {
        if x.is_nan() {
            QualityScore(0.0)
        } else {
            QualityScore(x.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QualityScore {
    type Error = ModelError;

    fn try_from(x: f64) -> Result<Self, Self::Error> {
        make_quality_score(x)
    }
}

impl From<QualityScore> for f64 {
    fn from(s: QualityScore) -> f64 {
        s.0
    }
}

pub fn make_quality_score(x: f64) -> Result<QualityScore, ModelError> {
    if x.is_finite() && (0.0..=1.0).contains(&x) {
        Ok(QualityScore(x))
    } else {
        Err(ModelError::ScoreOutOfRange(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermediateOutput {
    pub producer: RoleSpec,
    pub content: String,
    pub label: StatusLabel,
    pub score: QualityScore,
}

/// Canonical form of an answer for comparison and grading.
///
/// * code: body of the last closed fenced block, else the trimmed text.
/// * choice / math: text after the last `final answer:` marker (if any),
///   wrappers stripped, whitespace collapsed, lowercased, trailing periods removed.
///   Math additionally reduces to the content of the last `\boxed{..}`.
///
/// The rewrite is iterated to a fixed point, which makes it idempotent.
pub fn normalize_answer(raw: &str, kind: TaskKind) -> String {
    match kind {
        TaskKind::Code => normalize_code(raw),
        TaskKind::Choice | TaskKind::Math => {
            let mut cur = raw.to_string();
            loop {
                let next = normalize_text_step(&cur, kind);
                if next == cur {
                    return next;
                }
                cur = next;
            }
        }
    }
}

fn normalize_code(raw: &str) -> String {
    match last_fenced_block(raw) {
        Some(body) => body.trim().to_string(),
        None => raw.trim().to_string(),
    }
}

/// Body of the last fenced block whose opening and closing fences are both present.
fn last_fenced_block(text: &str) -> Option<String> {
    let mut last = None;
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        let is_fence = line.trim_start().starts_with("```");
        match (&mut current, is_fence) {
            (None, true) => current = Some(Vec::new()),
            (Some(body), true) => {
                last = Some(body.join("\n"));
                current = None;
            }
            (Some(body), false) => body.push(line),
            (None, false) => {}
        }
    }
    last
}

const FINAL_ANSWER_MARKER: &str = "final answer:";

fn normalize_text_step(s: &str, kind: TaskKind) -> String {
    let mut t = s.to_lowercase();
    if let Some(pos) = t.rfind(FINAL_ANSWER_MARKER) {
        t = t[pos + FINAL_ANSWER_MARKER.len()..].to_string();
    }
    if kind == TaskKind::Math {
        if let Some(inner) = last_boxed_content(&t) {
            t = inner;
        }
    }
    let mut t = collapse_whitespace(&t);
    loop {
        let before = t.clone();
        t = t.trim().trim_end_matches('.').trim().to_string();
        t = strip_wrappers(&t, kind);
        if t == before {
            break;
        }
    }
    t
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_wrappers(s: &str, kind: TaskKind) -> String {
    let mut pairs: Vec<(&str, &str)> = vec![("**", "**"), ("`", "`"), ("\"", "\"")];
    match kind {
        TaskKind::Math => pairs.extend([("$$", "$$"), ("$", "$"), ("\\(", "\\)"), ("\\[", "\\]")]),
        TaskKind::Choice => pairs.extend([("(", ")"), ("[", "]")]),
        TaskKind::Code => {}
    }
    for (open, close) in pairs {
        if s.len() >= open.len() + close.len() && s.starts_with(open) && s.ends_with(close) {
            let inner = &s[open.len()..s.len() - close.len()];
            // `(a) or (b)` starts and ends with parens but is not wrapped by them.
            if balanced_wrapper(inner, open, close) {
                return inner.trim().to_string();
            }
        }
    }
    s.to_string()
}

fn balanced_wrapper(inner: &str, open: &str, close: &str) -> bool {
    if open != close {
        let mut depth = 0i32;
        for c in inner.chars() {
            if open.ends_with(c) && open.len() == 1 {
                depth += 1;
            } else if close.ends_with(c) && close.len() == 1 {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
        }
        depth == 0
    } else {
        !inner.contains(open)
    }
}

/// Content of the last `\boxed{...}` (or `\fbox{...}`), braces matched.
pub fn last_boxed_content(s: &str) -> Option<String> {
    let start = ["\\boxed{", "\\fbox{"]
        .iter()
        .filter_map(|m| s.rfind(m).map(|p| p + m.len()))
        .max()?;
    let mut depth = 1usize;
    for (i, c) in s[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(s[start..start + i].to_string());
                }
            }
            _ => {}
        }
    }
    None
}
