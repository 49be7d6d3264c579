use serde::{Deserialize, Serialize};

use super::tree::{NodeId, SearchTree};
use crate::model::StatusLabel;

/// Reward or penalty attached to the terminal label of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactFactors {
    pub success: f64,
    pub fail: f64,
    #[serde(rename = "continue")]
    pub cont: f64,
}

impl Default for ImpactFactors {
    fn default() -> Self {
        Self { success: 1.0, fail: -1.0, cont: 0.0 }
    }
}

impl ImpactFactors {
    pub fn of(&self, label: StatusLabel) -> f64 {
        match label {
            StatusLabel::Success => self.success,
            StatusLabel::Fail => self.fail,
            StatusLabel::Continue => self.cont,
        }
    }
}

/// One node update, as written to the trace's backprop log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackpropRecord {
    pub node_id: NodeId,
    pub v_before: f64,
    pub n_before: u64,
    pub lambda: f64,
    pub scores: Vec<f64>,
    pub v_after: f64,
    pub n_after: u64,
}

/// The value update for one node:
/// `v* = (v·n + λ + ΣS) / (n + |S|)`, then `visits = n + |S|`, `total = v*·visits`.
///
/// Returns `None` when the node has never been visited and receives no scores,
/// since the update is undefined there.
pub fn updated_mean(v: f64, n: u64, lambda: f64, scores: &[f64]) -> Option<(f64, u64)> {
    let c = scores.len() as u64;
    let denom = n + c;
    if denom == 0 {
        return None;
    }
    let sum: f64 = scores.iter().sum();
    Some(((v * n as f64 + lambda + sum) / denom as f64, denom))
}

/// Applies the update to every `(node, scores)` pair in order (root first) and
/// returns the log records. The node owning the rollout passes all rollout
/// scores; ancestors pass the single propagated leaf score.
pub fn backpropagate(
    tree: &mut SearchTree,
    contributions: &[(NodeId, Vec<f64>)],
    terminal_label: StatusLabel,
    impact: &ImpactFactors,
) -> Vec<BackpropRecord> {
    let lambda = impact.of(terminal_label);
    let mut log = Vec::with_capacity(contributions.len());
    for (id, scores) in contributions {
        let node = tree.node_mut(*id);
        let v_before = node.mean_value();
        let n_before = node.visits;
        let Some((v_after, n_after)) = updated_mean(v_before, n_before, lambda, scores) else {
            continue;
        };
        node.visits = n_after;
        node.total_value = v_after * n_after as f64;
        log.push(BackpropRecord {
            node_id: *id,
            v_before,
            n_before,
            lambda,
            scores: scores.clone(),
            v_after,
            n_after,
        });
    }
    log
}
