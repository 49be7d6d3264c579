//! Outer planning loop: plan one subtask at a time from the execution history,
//! design roles for it, delegate it to the workflow search, and stop on the
//! planner's `stop`, on answer consensus, or when the subtask budget runs out.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::events::{EventSink, RunEvent, SubtaskSearch};
use crate::gateway::{extract_json_any, Gateway, GatewayError};
use crate::model::{
    normalize_answer, ExecutionHistory, HistoryEntry, QualityScore, QueryBundle, RoleSpec, Subtask, TaskKind,
};
use crate::prompts::{self, keys};
use crate::search::{SearchConfig, WorkflowSearch};

/// Consensus threshold as a percentage; compared on exact integer arithmetic.
pub const CONSENSUS_PERCENT: usize = 66;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBudget {
    pub max_subtasks: u32,
    pub mcts_iterations: u32,
    pub simulation_depth: u32,
    pub max_roles_per_subtask: u32,
}

impl Default for RunBudget {
    fn default() -> Self {
        Self { max_subtasks: 6, mcts_iterations: 8, simulation_depth: 3, max_roles_per_subtask: 4 }
    }
}

impl RunBudget {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("max_subtasks", self.max_subtasks),
            ("mcts_iterations", self.mcts_iterations),
            ("simulation_depth", self.simulation_depth),
            ("max_roles_per_subtask", self.max_roles_per_subtask),
        ] {
            if v < 1 {
                return Err(format!("budgets.{name} must be >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    PlannerStop,
    EarlyConsensus,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub final_answer: String,
    pub history: ExecutionHistory,
    pub stop_reason: StopReason,
    pub trace_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReasoningOptions {
    pub budget: RunBudget,
    pub search: SearchConfig,
    pub task_kind: TaskKind,
    /// Run the refined query as one subtask without consulting the planner.
    pub single_step: bool,
}

pub struct ReasoningStack<'a> {
    gateway: &'a Gateway,
    options: ReasoningOptions,
    events: EventSink,
}

#[derive(Deserialize)]
struct RolesReply {
    roles: Vec<RoleSpec>,
}

impl<'a> ReasoningStack<'a> {
    pub fn new(gateway: &'a Gateway, options: ReasoningOptions) -> Self {
        Self { gateway, options, events: EventSink::none() }
    }

    pub fn with_events(mut self, events: EventSink) -> Self {
        self.events = events;
        self
    }

    pub fn plan_next_subtask(&self, bundle: &QueryBundle, history: &ExecutionHistory) -> Result<Subtask> {
        let index = history.next_index();
        let request = self.gateway.request(
            prompts::PLANNER,
            vec![
                prompts::refined_prompt_block(bundle),
                prompts::representation_block(&bundle.representation),
                format!("Completed subtasks:\n{}", prompts::render_history(history)),
            ],
        );
        let reply = self.gateway.complete(keys::PLANNER, &request)?.text;
        let text = reply.trim();
        let bare = text.trim_matches(|c: char| matches!(c, '`' | '"' | '\'' | '.' | '*')).trim();
        if bare.eq_ignore_ascii_case("stop") {
            return Ok(Subtask::stop(index));
        }
        if text.is_empty() {
            return Err(GatewayError::malformed("planner reply is neither `stop` nor a subtask description").into());
        }
        Ok(Subtask::new(index, text))
    }

    pub fn design_roles(&self, subtask: &Subtask, bundle: &QueryBundle) -> Result<Vec<RoleSpec>> {
        if subtask.is_stop {
            return Err(EngineError::Validation("cannot design roles for the stop sentinel".into()));
        }
        let max = self.options.budget.max_roles_per_subtask as usize;
        let mut messages = prompts::subtask_context(subtask, bundle);
        messages.push(format!("Design between 1 and {max} roles."));
        let request = self.gateway.request(prompts::ROLE_DESIGNER, messages);
        let roles = self.gateway.complete_parsed(keys::ROLE_DESIGNER, &request, |text| {
            let value = extract_json_any(text)?;
            let roles: Vec<RoleSpec> = if value.is_array() {
                serde_json::from_value(value)
            } else {
                serde_json::from_value::<RolesReply>(value).map(|r| r.roles)
            }
            .map_err(|e| EngineError::Gateway(GatewayError::malformed(format!("role list: {e}"))))?;
            if roles.is_empty() {
                return Err(EngineError::NoRoles);
            }
            Ok(roles)
        })?;
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for role in roles.into_iter().take(max) {
            role.validate()?;
            if !seen.insert(role.role_name.clone()) {
                return Err(EngineError::DuplicateRole(role.role_name));
            }
            out.push(role);
        }
        Ok(out)
    }

    pub fn run(&self, bundle: &QueryBundle) -> Result<RunOutcome> {
        let budget = self.options.budget;
        let kind = self.options.task_kind;
        let search = WorkflowSearch::new(self.gateway, self.search_config()).with_events(self.events.clone());
        let mut history = ExecutionHistory::new();
        let mut stop_reason = StopReason::BudgetExhausted;

        let max_subtasks = if self.options.single_step { 1 } else { budget.max_subtasks };
        for _ in 0..max_subtasks {
            let subtask = if self.options.single_step {
                Subtask::new(1, bundle.refined_prompt.clone())
            } else {
                self.plan_next_subtask(bundle, &history)?
            };
            if subtask.is_stop {
                stop_reason = StopReason::PlannerStop;
                break;
            }
            self.events.emit(RunEvent::SubtaskStarted { index: subtask.index, description: subtask.description.clone() });
            log::info!("subtask {}: {}", subtask.index, subtask.description);

            let roles = self.design_roles(&subtask, bundle)?;
            let outcome = search.search(&subtask, roles.clone(), bundle)?;
            let score = QualityScore::clamped(outcome.trajectory.mean_value);
            let answer = outcome.trajectory.answer.clone();
            self.events.emit(RunEvent::SearchFinished(Box::new(SubtaskSearch {
                subtask: subtask.clone(),
                roles,
                tree: outcome.tree,
                backprop_log: outcome.backprop_log,
                best: outcome.trajectory,
            })));
            history.push(HistoryEntry { subtask: subtask.clone(), answer: answer.clone(), best_score: score })?;
            self.events.emit(RunEvent::SubtaskFinished { index: subtask.index, answer, score });

            if should_stop_early(&history, kind) {
                self.events.emit(RunEvent::EarlyStop { index: subtask.index });
                log::info!("early stop after subtask {}: answers agree", subtask.index);
                stop_reason = StopReason::EarlyConsensus;
                break;
            }
        }

        if history.is_empty() {
            return Err(EngineError::NoAnswer);
        }
        Ok(RunOutcome {
            final_answer: aggregate_final(&history, kind),
            history,
            stop_reason,
            trace_ref: String::new(),
        })
    }

    fn search_config(&self) -> SearchConfig {
        SearchConfig {
            iterations: self.options.budget.mcts_iterations,
            depth: self.options.budget.simulation_depth,
            ..self.options.search
        }
    }
}

/// Size of the largest group of normalized-equal answers.
fn largest_class(history: &ExecutionHistory, kind: TaskKind) -> usize {
    let keys: Vec<String> = history.entries.iter().map(|e| normalize_answer(&e.answer, kind)).collect();
    keys.iter().map(|k| keys.iter().filter(|o| *o == k).count()).max().unwrap_or(0)
}

/// True once at least two subtasks are done and at least 66% of them agree
/// (under [`normalize_answer`]) on one answer.
pub fn should_stop_early(history: &ExecutionHistory, kind: TaskKind) -> bool {
    let n = history.len();
    if n < 2 {
        return false;
    }
    largest_class(history, kind) * 100 >= CONSENSUS_PERCENT * n
}

/// Majority vote over normalized answers. Ties go to the class with the larger
/// summed score, then to the class seen first. Returns the raw text of the
/// winning class's best-scoring entry.
pub fn aggregate_final(history: &ExecutionHistory, kind: TaskKind) -> String {
    struct Class<'h> {
        key: String,
        count: usize,
        score_sum: f64,
        first_index: u32,
        best: &'h HistoryEntry,
    }
    let mut classes: Vec<Class> = Vec::new();
    for entry in &history.entries {
        let key = normalize_answer(&entry.answer, kind);
        match classes.iter_mut().find(|c| c.key == key) {
            Some(c) => {
                c.count += 1;
                c.score_sum += entry.best_score.value();
                if entry.best_score.value() > c.best.best_score.value() {
                    c.best = entry;
                }
            }
            None => classes.push(Class {
                key,
                count: 1,
                score_sum: entry.best_score.value(),
                first_index: entry.subtask.index,
                best: entry,
            }),
        }
    }
    let mut winner: Option<&Class> = None;
    for c in &classes {
        let better = match winner {
            None => true,
            Some(w) => {
                c.count > w.count
                    || (c.count == w.count && c.score_sum > w.score_sum)
                    || (c.count == w.count && c.score_sum == w.score_sum && c.first_index < w.first_index)
            }
        };
        if better {
            winner = Some(c);
        }
    }
    winner.map(|w| w.best.answer.clone()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Decoding, GatewayErrorKind, ScriptedBackend};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn history(answers: &[(&str, f64)]) -> ExecutionHistory {
        let mut h = ExecutionHistory::new();
        for (i, (a, s)) in answers.iter().enumerate() {
            h.push(HistoryEntry {
                subtask: Subtask::new(i as u32 + 1, format!("step {}", i + 1)),
                answer: a.to_string(),
                best_score: QualityScore::new(*s).unwrap(),
            })
            .unwrap();
        }
        h
    }

    fn gateway(script: &[(&str, &[&str])]) -> Gateway {
        let map: BTreeMap<String, Vec<String>> = script
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect();
        Gateway::new(Arc::new(ScriptedBackend::new(map)), Decoding::default())
    }

    fn options() -> ReasoningOptions {
        ReasoningOptions {
            budget: RunBudget::default(),
            search: SearchConfig::default(),
            task_kind: TaskKind::Math,
            single_step: false,
        }
    }

    #[test]
    fn early_stop_examples() {
        assert!(should_stop_early(&history(&[("42", 0.5), ("42", 0.5), ("17", 0.5)]), TaskKind::Math));
        assert!(!should_stop_early(&history(&[("42", 0.5), ("17", 0.5)]), TaskKind::Math));
        assert!(!should_stop_early(&ExecutionHistory::new(), TaskKind::Math));
        assert!(!should_stop_early(&history(&[("42", 0.5)]), TaskKind::Math));
        assert!(should_stop_early(&history(&[("\\boxed{42}", 0.5), ("42.", 0.5)]), TaskKind::Math));
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_final(&history(&[("A", 0.1), ("A", 0.1), ("B", 0.9)]), TaskKind::Choice), "A");
        assert_eq!(aggregate_final(&history(&[("A", 0.7), ("B", 0.6)]), TaskKind::Choice), "A");
        assert_eq!(aggregate_final(&history(&[("A", 0.6), ("B", 0.7)]), TaskKind::Choice), "B");
        assert_eq!(aggregate_final(&history(&[("A", 0.5), ("B", 0.5)]), TaskKind::Choice), "A");
        // Raw text of the best-scoring member of the winning class.
        assert_eq!(aggregate_final(&history(&[("a.", 0.2), ("A", 0.8), ("c", 0.9)]), TaskKind::Choice), "A");
    }

    #[test]
    fn planner_stop_and_indexing() {
        let gw = gateway(&[("planner", &["stop", "Derive the discriminant", "  `STOP`  ", "Next"])]);
        let stack = ReasoningStack::new(&gw, options());
        let b = QueryBundle::unrefined("q");
        assert!(stack.plan_next_subtask(&b, &ExecutionHistory::new()).unwrap().is_stop);
        assert_eq!(
            stack.plan_next_subtask(&b, &ExecutionHistory::new()).unwrap(),
            Subtask::new(1, "Derive the discriminant")
        );
        assert!(stack.plan_next_subtask(&b, &ExecutionHistory::new()).unwrap().is_stop);
        let t = stack.plan_next_subtask(&b, &history(&[("a", 0.1), ("b", 0.1)])).unwrap();
        assert_eq!(t.index, 3);
    }

    #[test]
    fn planner_empty_reply_is_malformed() {
        let gw = gateway(&[("planner", &["   "])]);
        let err = ReasoningStack::new(&gw, options())
            .plan_next_subtask(&QueryBundle::unrefined("q"), &ExecutionHistory::new())
            .unwrap_err();
        assert!(matches!(err, EngineError::Gateway(ref g) if g.kind == GatewayErrorKind::MalformedResponse));
    }

    fn roles_json(n: usize) -> String {
        let roles: Vec<_> = (0..n)
            .map(|i| serde_json::json!({"role_name": format!("r{i}"), "system_prompt": "p", "rationale": "x"}))
            .collect();
        serde_json::json!({ "roles": roles }).to_string()
    }

    #[test]
    fn design_roles_pass_through_and_truncation() {
        let two = roles_json(2);
        let six = roles_json(6);
        let gw = gateway(&[("role_designer", &[&two, &six])]);
        let stack = ReasoningStack::new(&gw, options());
        let b = QueryBundle::unrefined("q");
        let t = Subtask::new(1, "t");
        let names: Vec<_> = stack.design_roles(&t, &b).unwrap().into_iter().map(|r| r.role_name).collect();
        assert_eq!(names, ["r0", "r1"]);
        assert_eq!(stack.design_roles(&t, &b).unwrap().len(), 4);
    }

    #[test]
    fn design_roles_errors() {
        let gw = gateway(&[("role_designer", &["[]", "[]"])]);
        let stack = ReasoningStack::new(&gw, options());
        let b = QueryBundle::unrefined("q");
        assert_eq!(stack.design_roles(&Subtask::new(1, "t"), &b).unwrap_err(), EngineError::NoRoles);

        let dup = r#"[{"role_name":"x","system_prompt":"p"},{"role_name":"x","system_prompt":"q"}]"#;
        let gw = gateway(&[("role_designer", &[dup])]);
        let err = ReasoningStack::new(&gw, options()).design_roles(&Subtask::new(1, "t"), &b).unwrap_err();
        assert_eq!(err, EngineError::DuplicateRole("x".into()));

        assert!(ReasoningStack::new(&gw, options()).design_roles(&Subtask::stop(1), &b).is_err());
    }

    #[test]
    fn budget_defaults_and_validation() {
        let b = RunBudget::default();
        assert_eq!((b.max_subtasks, b.mcts_iterations, b.simulation_depth, b.max_roles_per_subtask), (6, 8, 3, 4));
        assert!(RunBudget { mcts_iterations: 0, ..b }.validate().is_err());
    }

    #[test]
    fn immediate_planner_stop_is_no_answer() {
        let gw = gateway(&[("planner", &["stop"])]);
        let err = ReasoningStack::new(&gw, options()).run(&QueryBundle::unrefined("q")).unwrap_err();
        assert_eq!(err, EngineError::NoAnswer);
    }
}
