use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, GatewayErrorKind};

/// Deterministic backend serving canned replies per routing key.
///
/// Fixture file format: a JSON object mapping routing key to an ordered array
/// of reply strings. Each call consumes the next reply for its key.
pub struct ScriptedBackend {
    script: Mutex<BTreeMap<String, VecDeque<String>>>,
    received: Mutex<Vec<(String, ChatRequest)>>,
}

impl ScriptedBackend {
    pub fn new(script: BTreeMap<String, Vec<String>>) -> Self {
        Self {
            script: Mutex::new(script.into_iter().map(|(k, v)| (k, v.into())).collect()),
            received: Mutex::new(Vec::new()),
        }
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(json)?))
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Every request seen so far, with its routing key, in arrival order.
    pub fn received(&self) -> Vec<(String, ChatRequest)> {
        self.received.lock().expect("scripted backend poisoned").clone()
    }

    pub fn remaining(&self, routing_key: &str) -> usize {
        self.script
            .lock()
            .expect("scripted backend poisoned")
            .get(routing_key)
            .map_or(0, VecDeque::len)
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, routing_key: &str, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.received
            .lock()
            .expect("scripted backend poisoned")
            .push((routing_key.to_string(), request.clone()));
        let reply = self
            .script
            .lock()
            .expect("scripted backend poisoned")
            .get_mut(routing_key)
            .and_then(VecDeque::pop_front);
        match reply {
            Some(text) => Ok(ChatResponse::text_only(text, self.id())),
            None => Err(GatewayError::new(
                GatewayErrorKind::ScriptExhausted,
                format!("no scripted reply left for routing key {routing_key:?}"),
            )),
        }
    }
}
