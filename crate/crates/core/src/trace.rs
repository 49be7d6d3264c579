//! Persistent record of one run: config snapshot, refined query, every search
//! tree with its backprop log, the full gateway call log, and the outcome.
//!
//! Files are gzip-compressed JSON (`.halo.json.gz`), written to a temp file in
//! the target directory and renamed into place.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::events::SubtaskSearch;
use crate::gateway::CallRecord;
use crate::model::QueryBundle;
use crate::reasoning::RunOutcome;
use crate::search::BackpropRecord;

pub const SCHEMA_VERSION: &str = "1.0";
pub const TRACE_EXTENSION: &str = ".halo.json.gz";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("trace parse error at byte {offset}: {detail}")]
    Parse { offset: u64, detail: String },
    #[error("unsupported trace schema version {found} (this build reads {SCHEMA_VERSION})")]
    UnsupportedVersion { found: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowTrace {
    pub schema_version: String,
    pub run_id: String,
    pub created_at: String,
    pub prompt_version: String,
    pub backend_id: String,
    pub config: EngineConfig,
    pub query: String,
    pub bundle: Option<QueryBundle>,
    pub subtasks: Vec<SubtaskSearch>,
    pub calls: Vec<CallRecord>,
    pub outcome: Option<RunOutcome>,
    pub error: Option<String>,
}

impl WorkflowTrace {
    /// All backprop records across subtasks, in run order.
    pub fn backprop_log(&self) -> Vec<BackpropRecord> {
        self.subtasks.iter().flat_map(|s| s.backprop_log.iter().cloned()).collect()
    }

    pub fn calls_for(&self, routing_key: &str) -> usize {
        self.calls.iter().filter(|c| c.routing_key == routing_key).count()
    }

    pub fn file_name(&self) -> String {
        format!("{}{}", self.run_id, TRACE_EXTENSION)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, TraceError> {
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| parse_error(bytes, &e))?;
        let found = value.get("schema_version").and_then(|v| v.as_str()).unwrap_or("").to_string();
        if found.split('.').next() != SCHEMA_VERSION.split('.').next() {
            return Err(TraceError::UnsupportedVersion { found });
        }
        serde_json::from_value(value).map_err(|e| TraceError::Parse { offset: 0, detail: e.to_string() })
    }

    /// Writes the trace to `path` atomically.
    pub fn save(&self, path: &Path) -> Result<(), TraceError> {
        let io = |source| TraceError::Io { path: path.to_owned(), source };
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_owned(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&dir).map_err(io)?;
        let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
        let mut encoder = GzEncoder::new(tmp, Compression::default());
        encoder.write_all(self.to_json_pretty().as_bytes()).map_err(io)?;
        let tmp = encoder.finish().map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    /// Writes into `dir` under the run id and returns the final path.
    pub fn save_in(&self, dir: &Path) -> Result<PathBuf, TraceError> {
        let path = dir.join(self.file_name());
        self.save(&path)?;
        Ok(path)
    }

    /// Reads a gzip trace, or plain JSON when the file is not gzip-compressed.
    pub fn load(path: &Path) -> Result<Self, TraceError> {
        let raw = std::fs::read(path).map_err(|source| TraceError::Io { path: path.to_owned(), source })?;
        if !raw.starts_with(&[0x1f, 0x8b]) {
            return Self::from_json(&raw);
        }
        let mut decoder = GzDecoder::new(raw.as_slice());
        let mut json = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match decoder.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => json.extend_from_slice(&buf[..n]),
                Err(e) => {
                    return Err(TraceError::Parse {
                        offset: json.len() as u64,
                        detail: format!("compressed stream ends early ({e}); file may be truncated"),
                    })
                }
            }
        }
        Self::from_json(&json)
    }
}

/// Maps a serde_json line/column position to a byte offset in `bytes`.
fn parse_error(bytes: &[u8], e: &serde_json::Error) -> TraceError {
    let mut offset = 0usize;
    let mut line = 1usize;
    while line < e.line() && offset < bytes.len() {
        if bytes[offset] == b'\n' {
            line += 1;
        }
        offset += 1;
    }
    offset = (offset + e.column().saturating_sub(1)).min(bytes.len());
    TraceError::Parse { offset: offset as u64, detail: e.to_string() }
}
