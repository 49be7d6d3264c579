//! Monte Carlo tree search over role-specific agents for a single subtask.
//!
//! Each iteration selects a node by UCT, expands it with the next untried
//! role, rolls the new agent forward with follow-up agents until the judge
//! says success or fail (or the depth cap is hit), and backpropagates the
//! rollout scores together with the impact factor of the terminal label.

mod backprop;
mod tree;

use serde::Deserialize;

use crate::error::{EngineError, Result};
use crate::events::{EventSink, RunEvent};
use crate::gateway::{extract_json_block, Gateway, GatewayError};
use crate::model::{make_quality_score, IntermediateOutput, QualityScore, QueryBundle, RoleSpec, StatusLabel, Subtask};
use crate::prompts::{self, keys};

pub use backprop::{backpropagate, updated_mean, BackpropRecord, ImpactFactors};
pub use tree::{select, uct_score, NodeId, SearchNode, SearchTree, Trajectory};

/// Default exploration coefficient (√2 rounded as configured).
pub const DEFAULT_ALPHA: f64 = 1.414;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub alpha: f64,
    pub impact: ImpactFactors,
    pub iterations: u32,
    pub depth: u32,
    pub seed: i64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, impact: ImpactFactors::default(), iterations: 8, depth: 3, seed: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub trajectory: Trajectory,
    pub tree: SearchTree,
    pub backprop_log: Vec<BackpropRecord>,
}

pub struct WorkflowSearch<'a> {
    gateway: &'a Gateway,
    config: SearchConfig,
    events: EventSink,
}

#[derive(Deserialize)]
struct ScoreReply {
    score: f64,
}

impl<'a> WorkflowSearch<'a> {
    pub fn new(gateway: &'a Gateway, config: SearchConfig) -> Self {
        Self { gateway, config, events: EventSink::none() }
    }

    pub fn with_events(mut self, events: EventSink) -> Self {
        self.events = events;
        self
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn search(&self, subtask: &Subtask, roles: Vec<RoleSpec>, bundle: &QueryBundle) -> Result<SearchOutcome> {
        if roles.is_empty() {
            return Err(EngineError::NoRoles);
        }
        let mut tree = SearchTree::new(subtask.clone(), roles, self.config.seed);
        let mut backprop_log = Vec::new();

        for iteration in 0..self.config.iterations {
            let selected = select(&tree, self.config.alpha);
            let node = tree.node(selected);
            let closed = node.untried_roles.is_empty() || node.terminal_label == Some(StatusLabel::Success);

            let (contributions, label): (Vec<(NodeId, Vec<f64>)>, StatusLabel) = if closed {
                if node.is_root() {
                    break;
                }
                // Nothing left to expand here: credit the node's recorded outcome again.
                let traj = tree.trajectory_through(selected);
                let leaf_score = leaf_score(&tree, &traj);
                let contributions = tree.path_to(selected).into_iter().map(|id| (id, vec![leaf_score])).collect();
                (contributions, traj.terminal_label)
            } else {
                let child = self.expand(&mut tree, selected, bundle)?;
                let traj = self.simulate(&mut tree, child, self.config.depth, bundle)?;
                let rollout = tree.rollout_of(child);
                let child_scores: Vec<f64> = if rollout.is_empty() {
                    vec![output_score(&tree, child)]
                } else {
                    rollout.iter().map(|id| output_score(&tree, *id)).collect()
                };
                let leaf = *child_scores.last().expect("non-empty");
                let contributions = tree
                    .path_to(child)
                    .into_iter()
                    .map(|id| if id == child { (id, child_scores.clone()) } else { (id, vec![leaf]) })
                    .collect();
                (contributions, traj.terminal_label)
            };

            let log = backpropagate(&mut tree, &contributions, label, &self.config.impact);
            log::debug!("subtask {} iteration {iteration}: {} node updates ({label})", subtask.index, log.len());
            for record in &log {
                self.events.emit(RunEvent::Backprop { subtask_index: subtask.index, record: record.clone() });
            }
            backprop_log.extend(log);
        }

        let trajectory = best_trajectory(&tree).ok_or(EngineError::NoOutput)?;
        Ok(SearchOutcome { trajectory, tree, backprop_log })
    }

    /// Pops the node's first untried role, runs that agent, evaluates its
    /// output and attaches it as a fresh child (zero visits, zero value).
    pub fn expand(&self, tree: &mut SearchTree, node_id: NodeId, bundle: &QueryBundle) -> Result<NodeId> {
        if tree.node(node_id).untried_roles.is_empty() {
            return Err(EngineError::Validation(format!("node {node_id} has no untried roles to expand")));
        }
        let role = tree.node_mut(node_id).untried_roles.remove(0);
        let subtask = tree.subtask.clone();
        let prior = prior_outputs(tree, &tree.path_to(node_id));
        let content = self.run_agent(&role, &subtask, bundle, &prior)?;
        let (label, score) = self.evaluate_or_fail(&content, &subtask, bundle)?;
        let output = IntermediateOutput { producer: role.clone(), content, label, score };
        Ok(tree.add_child(node_id, role, output))
    }

    /// Judging agent assigns the status label, scoring agent the quality score.
    pub fn evaluate_output(
        &self,
        output_text: &str,
        subtask: &Subtask,
        bundle: &QueryBundle,
    ) -> Result<(StatusLabel, QualityScore)> {
        let messages = prompts::evaluation_messages(output_text, subtask, bundle);

        let judge = self.gateway.request(prompts::JUDGE, messages.clone());
        let label = self.gateway.complete_parsed(keys::JUDGE, &judge, |text| {
            parse_label(text).ok_or_else(|| GatewayError::malformed(format!("unknown status label {:?}", text.trim())))
        })?;

        let scorer = self.gateway.request(prompts::SCORER, messages);
        let score = self.gateway.complete_parsed(keys::SCORER, &scorer, |text| {
            let value = extract_json_block(text)?;
            let reply: ScoreReply = serde_json::from_value(value)
                .map_err(|e| GatewayError::malformed(format!("score reply: {e}")))?;
            make_quality_score(reply.score).map_err(|e| GatewayError::malformed(e.to_string()))
        })?;
        Ok((label, score))
    }

    /// Rolls forward from `node_id` with follow-up agents until a success or
    /// fail label or `depth` simulated steps. Rollout agents are attached as
    /// simulated children and are never selected later.
    pub fn simulate(&self, tree: &mut SearchTree, node_id: NodeId, depth: u32, bundle: &QueryBundle) -> Result<Trajectory> {
        let subtask = tree.subtask.clone();
        let mut path = tree.path_to(node_id);
        let mut last_label = tree.node(node_id).terminal_label.unwrap_or(StatusLabel::Continue);
        let mut cursor = node_id;
        let mut steps = 0;
        while steps < depth && !last_label.is_final() {
            let prior = prior_outputs(tree, &path);
            let role = self.followup_role(&subtask, bundle, &prior)?;
            let content = self.run_agent(&role, &subtask, bundle, &prior)?;
            let (label, score) = self.evaluate_or_fail(&content, &subtask, bundle)?;
            let output = IntermediateOutput { producer: role.clone(), content, label, score };
            cursor = tree.add_simulated(cursor, role, output);
            path.push(cursor);
            last_label = label;
            steps += 1;
        }
        let leaf = tree.node(*path.last().expect("path is never empty"));
        let answer = leaf.output.as_ref().map(|o| o.content.clone()).unwrap_or_default();
        Ok(Trajectory { node_ids: path, answer, terminal_label: last_label, mean_value: tree.node(node_id).mean_value() })
    }

    fn evaluate_or_fail(&self, content: &str, subtask: &Subtask, bundle: &QueryBundle) -> Result<(StatusLabel, QualityScore)> {
        if content.trim().is_empty() {
            // An empty output cannot complete anything; no need to ask the judge.
            return Ok((StatusLabel::Fail, QualityScore::ZERO));
        }
        self.evaluate_output(content, subtask, bundle)
    }

    fn run_agent(&self, role: &RoleSpec, subtask: &Subtask, bundle: &QueryBundle, prior: &[&IntermediateOutput]) -> Result<String> {
        let mut messages = prompts::subtask_context(subtask, bundle);
        if !prior.is_empty() {
            messages.push(prompts::outputs_block(prior));
        }
        messages.push(prompts::INFERENCE_SUFFIX.to_string());
        let request = self.gateway.request(role.system_prompt.clone(), messages);
        Ok(self.gateway.complete(&role.role_name, &request)?.text)
    }

    fn followup_role(&self, subtask: &Subtask, bundle: &QueryBundle, prior: &[&IntermediateOutput]) -> Result<RoleSpec> {
        let mut messages = prompts::subtask_context(subtask, bundle);
        messages.push(prompts::outputs_block(prior));
        let request = self.gateway.request(prompts::FOLLOWUP_DESIGNER, messages);
        let role = self.gateway.complete_parsed(keys::FOLLOWUP_DESIGNER, &request, |text| {
            let value = extract_json_block(text)?;
            let role: RoleSpec = serde_json::from_value(value)
                .map_err(|e| GatewayError::malformed(format!("follow-up role: {e}")))?;
            role.validate().map_err(|e| GatewayError::malformed(e.to_string()))?;
            Ok::<_, GatewayError>(role)
        })?;
        Ok(role)
    }
}

fn parse_label(text: &str) -> Option<StatusLabel> {
    let t = text.trim().trim_matches(|c: char| matches!(c, '.' | '"' | '\'' | '`' | '*')).trim();
    t.parse().ok()
}

fn prior_outputs<'t>(tree: &'t SearchTree, path: &[NodeId]) -> Vec<&'t IntermediateOutput> {
    path.iter().filter_map(|id| tree.node(*id).output.as_ref()).collect()
}

fn output_score(tree: &SearchTree, id: NodeId) -> f64 {
    tree.node(id).output.as_ref().map_or(0.0, |o| o.score.value())
}

fn leaf_score(tree: &SearchTree, traj: &Trajectory) -> f64 {
    output_score(tree, *traj.node_ids.last().expect("path is never empty"))
}

/// Highest mean value among trajectories ending in success; when none succeeded,
/// highest mean value overall. Ties go to the earliest-created node.
pub fn best_trajectory(tree: &SearchTree) -> Option<Trajectory> {
    let candidates: Vec<Trajectory> = tree
        .nodes
        .iter()
        .filter(|n| !n.is_root() && !n.simulated)
        .map(|n| tree.trajectory_through(n.node_id))
        .collect();
    let pool: Vec<&Trajectory> = if candidates.iter().any(|t| t.terminal_label == StatusLabel::Success) {
        candidates.iter().filter(|t| t.terminal_label == StatusLabel::Success).collect()
    } else {
        candidates.iter().collect()
    };
    let mut best: Option<&Trajectory> = None;
    for t in pool {
        if best.is_none_or(|b| t.mean_value > b.mean_value) {
            best = Some(t);
        }
    }
    best.cloned()
}
