//! Progress events emitted by a run, in order, over a channel.

use std::sync::mpsc::Sender;

use serde::{Deserialize, Serialize};

use crate::model::{QualityScore, RoleSpec, Subtask};
use crate::search::{BackpropRecord, SearchTree, Trajectory};

/// Everything the search produced for one subtask; persisted in traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskSearch {
    pub subtask: Subtask,
    pub roles: Vec<RoleSpec>,
    pub tree: SearchTree,
    pub backprop_log: Vec<BackpropRecord>,
    pub best: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunEvent {
    SubtaskStarted { index: u32, description: String },
    Backprop { subtask_index: u32, record: BackpropRecord },
    SearchFinished(Box<SubtaskSearch>),
    SubtaskFinished { index: u32, answer: String, score: QualityScore },
    EarlyStop { index: u32 },
}

/// Optional event sender. Send failures (receiver gone) are ignored.
#[derive(Clone, Default)]
pub struct EventSink(Option<Sender<RunEvent>>);

impl EventSink {
    pub fn new(tx: Sender<RunEvent>) -> Self {
        Self(Some(tx))
    }

    pub fn none() -> Self {
        Self(None)
    }

    pub fn emit(&self, event: RunEvent) {
        if let Some(tx) = &self.0 {
            let _ = tx.send(event);
        }
    }
}
