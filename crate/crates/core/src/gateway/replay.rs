use std::sync::Mutex;

use super::{CallRecord, ChatBackend, ChatRequest, ChatResponse, GatewayError, GatewayErrorKind};

/// Serves a recorded call log back in order, checking that each incoming call
/// matches the recorded routing key and request digest.
pub struct ReplayBackend {
    records: Vec<CallRecord>,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    pub fn new(records: Vec<CallRecord>) -> Self {
        Self { records, cursor: Mutex::new(0) }
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().expect("replay cursor poisoned")
    }

    pub fn total(&self) -> usize {
        self.records.len()
    }
}

impl ChatBackend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn complete(&self, routing_key: &str, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut cursor = self.cursor.lock().expect("replay cursor poisoned");
        let index = *cursor;
        let Some(record) = self.records.get(index) else {
            return Err(GatewayError {
                call_index: Some(index),
                ..GatewayError::new(
                    GatewayErrorKind::ScriptExhausted,
                    format!("recording has only {} calls; call {index} ({routing_key}) not recorded", self.records.len()),
                )
            });
        };
        let digest = request.digest();
        if record.routing_key != routing_key || record.request_digest != digest {
            return Err(GatewayError {
                call_index: Some(index),
                ..GatewayError::new(
                    GatewayErrorKind::ReplayDivergence,
                    format!(
                        "call {index}: expected {} [{}], got {routing_key} [{digest}]",
                        record.routing_key,
                        &record.request_digest[..record.request_digest.len().min(12)]
                    ),
                )
            });
        }
        *cursor += 1;
        Ok(ChatResponse { attempts: record.attempts, ..ChatResponse::text_only(record.response_text.clone(), "replay") })
    }
}
