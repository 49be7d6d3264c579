//! Parent side of the code-execution shim protocol: one JSON request line on
//! the shim's stdin, one JSON result line on its stdout.

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Extra wait on top of the request timeout before the shim is killed.
pub const SHIM_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub solution_source: String,
    pub test_source: String,
    pub entry_point: String,
    pub timeout_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeVerdict {
    Pass,
    Fail,
    Timeout,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub status: CodeVerdict,
    #[serde(default)]
    pub detail: String,
}

/// Starts one shim process per request, so concurrent callers never share one.
#[derive(Debug, Clone)]
pub struct ShimClient {
    command: Vec<String>,
}

impl ShimClient {
    pub fn new(command: Vec<String>) -> Result<Self, EvalError> {
        if command.is_empty() || command[0].trim().is_empty() {
            return Err(EvalError::ShimUnavailable("empty shim command".into()));
        }
        Ok(Self { command })
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    pub fn run(&self, request: &ExecRequest) -> Result<ExecResult, EvalError> {
        if !(request.timeout_s.is_finite() && request.timeout_s > 0.0) {
            return Err(EvalError::Shim(format!("timeout_s must be > 0, got {}", request.timeout_s)));
        }
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| EvalError::ShimUnavailable(format!("{}: {e}", self.command.join(" "))))?;

        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        let mut stdin = child.stdin.take().expect("piped stdin");
        if let Err(e) = stdin.write_all(line.as_bytes()) {
            let _ = child.kill();
            let _ = child.wait();
            return Err(EvalError::Shim(format!("writing request: {e}")));
        }
        drop(stdin);

        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reply = String::new();
            let _ = tx.send(BufReader::new(stdout).read_line(&mut reply).map(|_| reply));
        });
        let limit = Duration::from_secs_f64(request.timeout_s) + SHIM_GRACE;
        let reply = rx.recv_timeout(limit);
        if !matches!(child.try_wait(), Ok(Some(_))) {
            let _ = child.kill();
        }
        let _ = child.wait();

        match reply {
            Err(_) => Ok(ExecResult {
                status: CodeVerdict::Timeout,
                detail: format!("no reply from shim within {:.1}s; process killed", limit.as_secs_f64()),
            }),
            Ok(Err(e)) => Err(EvalError::Shim(format!("reading reply: {e}"))),
            Ok(Ok(text)) if text.trim().is_empty() => Err(EvalError::Shim("shim exited without a reply".into())),
            Ok(Ok(text)) => serde_json::from_str(text.trim()).map_err(|e| EvalError::Shim(format!("bad reply {text:?}: {e}"))),
        }
    }
}
