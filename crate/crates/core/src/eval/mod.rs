//! Benchmark evaluation: dataset loaders, stratified sampling, grading, and
//! pass@1 / accuracy reports.

mod datasets;
mod grade;
mod harness;
mod sample;
mod shim;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TaskKind;

pub use datasets::{load_code_jsonl, load_choice_dir, load_dataset, load_math_dir};
pub use grade::{compute_metric, grade_choice, grade_code, grade_item, grade_math, metric_name, percent_one_decimal};
pub use harness::{run_bench, BenchOptions};
pub use sample::{largest_remainder, stratified_sample, SampleSpec};
pub use shim::{CodeVerdict, ExecRequest, ExecResult, ShimClient, SHIM_GRACE};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no benchmark items")]
    EmptyItems,
    #[error("invalid sample spec: {0}")]
    InvalidSpec(String),
    #[error("dataset error in {path}: {detail}")]
    Dataset { path: String, detail: String },
    #[error("code-execution shim unavailable: {0}")]
    ShimUnavailable(String),
    #[error("code-execution shim protocol error: {0}")]
    Shim(String),
    #[error("report has no rows")]
    EmptyReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub kind: TaskKind,
    pub prompt: String,
    /// Gold answer, or the unit-test source for code items.
    pub reference: String,
    pub stratum: String,
    /// Function under test for code items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_point: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub stratum: String,
    pub predicted: String,
    pub correct: bool,
    pub runtime_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric_name: String,
    pub metric_value: f64,
    pub per_stratum: BTreeMap<String, f64>,
    pub per_item: Vec<ItemResult>,
}

impl EvalReport {
    /// Plain-text table: overall metric, then one line per stratum.
    pub fn table(&self) -> String {
        let width = self.per_stratum.keys().map(|k| k.len()).max().unwrap_or(0).max(self.metric_name.len());
        let mut out = format!("{:<width$}  {:>6.1}  ({} items)\n", self.metric_name, self.metric_value, self.per_item.len());
        for (stratum, value) in &self.per_stratum {
            out.push_str(&format!("{stratum:<width$}  {value:>6.1}\n"));
        }
        out
    }
}
