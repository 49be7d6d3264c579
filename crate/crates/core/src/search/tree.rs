use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::model::{IntermediateOutput, RoleSpec, StatusLabel, Subtask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// One agent in the search tree. The root carries no role and no output.
///
/// `total_value` is cumulative: the mean value is `total_value / visits`.
/// Rollout nodes created during simulation hang off `simulated_children`
/// and are never selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub node_id: NodeId,
    pub parent: Option<NodeId>,
    pub role: Option<RoleSpec>,
    pub output: Option<IntermediateOutput>,
    pub total_value: f64,
    pub visits: u64,
    pub children: Vec<NodeId>,
    pub simulated_children: Vec<NodeId>,
    pub untried_roles: Vec<RoleSpec>,
    pub terminal_label: Option<StatusLabel>,
    pub simulated: bool,
}

impl SearchNode {
    pub fn mean_value(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.total_value / self.visits as f64
        }
    }

    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }

    pub fn role_name(&self) -> Option<&str> {
        self.role.as_ref().map(|r| r.role_name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    pub subtask: Subtask,
    pub nodes: Vec<SearchNode>,
    pub root_id: NodeId,
    pub rng_seed: i64,
}

/// A root-to-leaf path and the answer held by its last node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub node_ids: Vec<NodeId>,
    pub answer: String,
    pub terminal_label: StatusLabel,
    pub mean_value: f64,
}

impl SearchTree {
    pub fn new(subtask: Subtask, roles: Vec<RoleSpec>, rng_seed: i64) -> Self {
        let root = SearchNode {
            node_id: NodeId(0),
            parent: None,
            role: None,
            output: None,
            total_value: 0.0,
            visits: 0,
            children: Vec::new(),
            simulated_children: Vec::new(),
            untried_roles: roles,
            terminal_label: None,
            simulated: false,
        };
        Self { subtask, nodes: vec![root], root_id: NodeId(0), rng_seed }
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id.0]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SearchNode {
        &mut self.nodes[id.0]
    }

    pub fn root(&self) -> &SearchNode {
        self.node(self.root_id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids from the root down to `id`, following parent links.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.node(cur).parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Roles the agents on the path to `id` already played.
    pub fn roles_on_path(&self, id: NodeId) -> HashSet<String> {
        self.path_to(id)
            .into_iter()
            .filter_map(|n| self.node(n).role_name().map(str::to_string))
            .collect()
    }

    fn push_node(&mut self, parent: NodeId, role: RoleSpec, output: IntermediateOutput, simulated: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        let untried_roles = if simulated {
            Vec::new()
        } else {
            let mut used = self.roles_on_path(parent);
            used.insert(role.role_name.clone());
            let mut roles = self.role_set();
            roles.retain(|r| !used.contains(&r.role_name));
            roles
        };
        let label = output.label;
        self.nodes.push(SearchNode {
            node_id: id,
            parent: Some(parent),
            role: Some(role),
            output: Some(output),
            total_value: 0.0,
            visits: 0,
            children: Vec::new(),
            simulated_children: Vec::new(),
            untried_roles,
            terminal_label: Some(label),
            simulated,
        });
        let p = self.node_mut(parent);
        if simulated {
            p.simulated_children.push(id);
        } else {
            p.children.push(id);
        }
        id
    }

    /// Attaches an expanded agent as a selectable child of `parent`.
    pub fn add_child(&mut self, parent: NodeId, role: RoleSpec, output: IntermediateOutput) -> NodeId {
        self.push_node(parent, role, output, false)
    }

    /// Attaches a rollout agent; it contributes to values but is never selected.
    pub fn add_simulated(&mut self, parent: NodeId, role: RoleSpec, output: IntermediateOutput) -> NodeId {
        self.push_node(parent, role, output, true)
    }

    /// The full role set of this subtask, in the order the role designer produced it.
    pub fn role_set(&self) -> Vec<RoleSpec> {
        let root = self.root();
        let mut roles: Vec<RoleSpec> = root
            .children
            .iter()
            .filter_map(|c| self.node(*c).role.clone())
            .collect();
        roles.extend(root.untried_roles.iter().cloned());
        roles
    }

    /// Rollout chain hanging below a selectable node (first simulated child, its
    /// first simulated child, and so on).
    pub fn rollout_of(&self, id: NodeId) -> Vec<NodeId> {
        let mut chain = Vec::new();
        let mut cur = id;
        while let Some(next) = self.node(cur).simulated_children.first().copied() {
            chain.push(next);
            cur = next;
        }
        chain
    }

    /// Trajectory through a selectable node and its recorded rollout.
    pub fn trajectory_through(&self, id: NodeId) -> Trajectory {
        let mut node_ids = self.path_to(id);
        node_ids.extend(self.rollout_of(id));
        let leaf = self.node(*node_ids.last().expect("path is never empty"));
        let (answer, label) = leaf
            .output
            .as_ref()
            .map(|o| (o.content.clone(), o.label))
            .unwrap_or((String::new(), StatusLabel::Continue));
        Trajectory { node_ids, answer, terminal_label: label, mean_value: self.node(id).mean_value() }
    }

    /// Structural checks: single root, consistent parent/child links,
    /// distinct child roles, and every node reachable from the root.
    pub fn check_invariants(&self) -> Result<(), String> {
        let roots: Vec<_> = self.nodes.iter().filter(|n| n.parent.is_none()).collect();
        if roots.len() != 1 || roots[0].node_id != self.root_id {
            return Err(format!("expected exactly one root {}, found {}", self.root_id, roots.len()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.node_id.0 != i {
                return Err(format!("node at slot {i} has id {}", n.node_id));
            }
            if let Some(p) = n.parent {
                // Parents are always created first, so links cannot form a cycle.
                if p.0 >= i {
                    return Err(format!("{} has parent {p} created after it", n.node_id));
                }
                let parent = self.nodes.get(p.0).ok_or_else(|| format!("{} has dangling parent {p}", n.node_id))?;
                let list = if n.simulated { &parent.simulated_children } else { &parent.children };
                if !list.contains(&n.node_id) {
                    return Err(format!("{} missing from its parent's child list", n.node_id));
                }
            }
            for c in n.children.iter().chain(&n.simulated_children) {
                if self.nodes.get(c.0).and_then(|x| x.parent) != Some(n.node_id) {
                    return Err(format!("child {c} of {} does not point back", n.node_id));
                }
            }
            let mut names = HashSet::new();
            for c in &n.children {
                if let Some(name) = self.node(*c).role_name() {
                    if !names.insert(name) {
                        return Err(format!("{} has two children with role {name:?}", n.node_id));
                    }
                }
            }
            if n.visits > 0 && !(-2.0..=2.0).contains(&n.mean_value()) {
                return Err(format!("{} mean value {} outside [-2, 2]", n.node_id, n.mean_value()));
            }
        }
        Ok(())
    }
}

/// Exploitation plus exploration: `total/visits + alpha * sqrt(ln(parent_visits) / visits)`.
/// Unvisited children score `+inf` so they are tried first.
pub fn uct_score(child_total: f64, child_visits: i64, parent_visits: i64, alpha: f64) -> Result<f64> {
    if child_visits < 0 || parent_visits < 0 {
        return Err(EngineError::Validation(format!(
            "visit counts must be non-negative (child {child_visits}, parent {parent_visits})"
        )));
    }
    if child_visits == 0 {
        return Ok(f64::INFINITY);
    }
    if parent_visits < 1 {
        return Err(EngineError::Validation("parent of a visited child must have at least one visit".into()));
    }
    if alpha.is_nan() || alpha < 0.0 {
        return Err(EngineError::Validation(format!("exploration coefficient must be >= 0, got {alpha}")));
    }
    let n = child_visits as f64;
    Ok(child_total / n + alpha * ((parent_visits as f64).ln() / n).sqrt())
}

/// Descends from the root by maximum UCT until reaching a node that still has
/// untried roles, has no children, or was judged a success. Ties go to the
/// earliest-inserted child.
pub fn select(tree: &SearchTree, alpha: f64) -> NodeId {
    let mut cur = tree.root_id;
    loop {
        let node = tree.node(cur);
        if !node.untried_roles.is_empty()
            || node.children.is_empty()
            || node.terminal_label == Some(StatusLabel::Success)
        {
            return cur;
        }
        let parent_visits = node.visits.max(1) as i64;
        let mut best: Option<(NodeId, f64)> = None;
        for &c in &node.children {
            let child = tree.node(c);
            let score = uct_score(child.total_value, child.visits as i64, parent_visits, alpha)
                .expect("tree visit counts are non-negative");
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((c, score));
            }
        }
        cur = best.expect("children is non-empty").0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QualityScore;

    fn role(name: &str) -> RoleSpec {
        RoleSpec { role_name: name.into(), system_prompt: format!("you are {name}"), rationale: String::new() }
    }

    fn output(name: &str, label: StatusLabel) -> IntermediateOutput {
        IntermediateOutput { producer: role(name), content: format!("{name} says"), label, score: QualityScore::clamped(0.5) }
    }

    /// Root with two expanded children carrying the given (total, visits).
    fn two_child_tree(a: (f64, u64), b: (f64, u64)) -> SearchTree {
        let mut t = SearchTree::new(Subtask::new(1, "t"), vec![role("a"), role("b")], 10);
        for (name, (total, visits)) in [("a", a), ("b", b)] {
            t.node_mut(NodeId(0)).untried_roles.remove(0);
            let id = t.add_child(NodeId(0), role(name), output(name, StatusLabel::Continue));
            t.node_mut(id).total_value = total;
            t.node_mut(id).visits = visits;
        }
        t.node_mut(NodeId(0)).visits = a.1 + b.1;
        t
    }

    #[test]
    fn uct_worked_value() {
        let v = uct_score(1.5, 2, 8, 1.414).unwrap();
        let expected = 0.75 + 1.414 * (8f64.ln() / 2.0).sqrt();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 2.1918).abs() < 1e-3);
    }

    #[test]
    fn uct_conventions() {
        assert_eq!(uct_score(123.0, 0, 5, 1.414).unwrap(), f64::INFINITY);
        assert_eq!(uct_score(1.0, 1, 1, 0.0).unwrap(), 1.0);
        assert!(uct_score(1.0, -1, 5, 1.0).is_err());
        assert!(uct_score(1.0, 1, -5, 1.0).is_err());
    }

    #[test]
    fn select_stops_at_root_with_untried_roles() {
        let t = SearchTree::new(Subtask::new(1, "t"), vec![role("a")], 0);
        assert_eq!(select(&t, 1.414), NodeId(0));
    }

    #[test]
    fn select_prefers_higher_mean_at_equal_visits() {
        let t = two_child_tree((0.1 * 3.0, 3), (0.9 * 3.0, 3));
        assert_eq!(select(&t, 1.414), NodeId(2));
    }

    #[test]
    fn select_breaks_ties_by_insertion_order() {
        let t = two_child_tree((1.0, 2), (1.0, 2));
        assert_eq!(select(&t, 1.414), NodeId(1));
    }

    #[test]
    fn child_untried_roles_exclude_path() {
        let mut t = SearchTree::new(Subtask::new(1, "t"), vec![role("a"), role("b"), role("c")], 0);
        t.node_mut(NodeId(0)).untried_roles.remove(0);
        let a = t.add_child(NodeId(0), role("a"), output("a", StatusLabel::Continue));
        let names: Vec<_> = t.node(a).untried_roles.iter().map(|r| r.role_name.clone()).collect();
        assert_eq!(names, ["b", "c"]);
        let ab = t.add_child(a, role("b"), output("b", StatusLabel::Continue));
        let names: Vec<_> = t.node(ab).untried_roles.iter().map(|r| r.role_name.clone()).collect();
        assert_eq!(names, ["c"]);
        let sim = t.add_simulated(ab, role("x"), output("x", StatusLabel::Success));
        assert!(t.node(sim).untried_roles.is_empty());
        assert_eq!(t.rollout_of(ab), vec![sim]);
        let traj = t.trajectory_through(ab);
        assert_eq!(traj.node_ids, vec![NodeId(0), a, ab, sim]);
        assert_eq!(traj.answer, "x says");
        assert_eq!(traj.terminal_label, StatusLabel::Success);
        t.check_invariants().unwrap();
        assert_eq!(t.role_set().len(), 3);
    }
}
