//! Precedence-feasible ordering of parts and the action primitives that
//! remove them.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{distance, Point};
use crate::model::{Capability, Category, PartId};
use crate::partgraph::{NodeState, PartGraph, PartNode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("graph contains a cycle; {remaining} nodes could not be ordered")]
    Cycle { remaining: usize },
    #[error("no action template for category {0}")]
    UnsupportedCategory(Category),
    #[error("category {0} missing from class priority")]
    UnrankedCategory(Category),
    #[error("category {0} listed more than once in class priority")]
    DuplicatePriority(Category),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Unscrew,
    Lift,
    Remove,
    Drop,
    Hold,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Unscrew => "unscrew",
            ActionKind::Lift => "lift",
            ActionKind::Remove => "remove",
            ActionKind::Drop => "drop",
            ActionKind::Hold => "hold",
        }
    }

    /// Completing an action of this kind takes its node off the graph.
    pub fn is_terminal(self) -> bool {
        matches!(self, ActionKind::Unscrew | ActionKind::Remove | ActionKind::Drop)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// Per-category recipe for one action step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTemplate {
    #[serde(rename = "kind")]
    pub action_kind: ActionKind,
    #[serde(rename = "category")]
    pub applicable_category: Category,
    /// Standoff above the target before the final approach, meters.
    #[serde(default)]
    pub approach_offset: f64,
    /// Approach speed, m/s.
    pub nominal_speed: f64,
    #[serde(default)]
    pub tool_params: BTreeMap<String, f64>,
    #[serde(rename = "capability")]
    pub capability_required: Capability,
    #[serde(default = "default_region_radius")]
    pub region_radius: f64,
}

pub const DEFAULT_REGION_RADIUS: f64 = 0.08;

fn default_region_radius() -> f64 {
    DEFAULT_REGION_RADIUS
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkspaceRegion {
    pub center: Point,
    pub radius: f64,
}

impl WorkspaceRegion {
    pub fn overlaps(&self, other: &WorkspaceRegion) -> bool {
        distance(&self.center, &other.center) < self.radius + other.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionId(pub u64);

impl ActionId {
    pub fn new(node: PartId, step: usize) -> Self {
        ActionId(((node.0 as u64) << 8) | step as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionPrimitive {
    pub id: ActionId,
    pub action_kind: ActionKind,
    pub target_node: PartId,
    pub target_position: Point,
    pub capability_required: Capability,
    pub workspace_region: WorkspaceRegion,
    pub retries_used: u32,
    pub approach_offset: f64,
    pub nominal_speed: f64,
    pub tool_params: BTreeMap<String, f64>,
    /// Stabilising action another arm must run for the whole duration.
    pub hold_partner: Option<Box<ActionPrimitive>>,
}

/// Category groups in decreasing priority.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassPriority(pub Vec<Vec<Category>>);

impl ClassPriority {
    /// Checks that each of `categories` appears in exactly one group.
    pub fn validate<'a>(&self, categories: impl IntoIterator<Item = &'a Category>) -> Result<(), SequenceError> {
        let mut seen = BTreeSet::new();
        for c in self.0.iter().flatten() {
            if !seen.insert(c) {
                return Err(SequenceError::DuplicatePriority(c.clone()));
            }
        }
        for c in categories {
            if !seen.contains(c) {
                return Err(SequenceError::UnrankedCategory(c.clone()));
            }
        }
        Ok(())
    }

    /// Group index, lower is more urgent. Unknown categories rank last.
    pub fn rank(&self, category: &Category) -> usize {
        self.0
            .iter()
            .position(|g| g.contains(category))
            .unwrap_or(self.0.len())
    }
}

/// Tie-breaker among simultaneously ready nodes: class priority, then
/// distance from `last_position`, then node id.
pub fn compare_ready(a: &PartNode, b: &PartNode, priority: &ClassPriority, last_position: &Point) -> Ordering {
    priority
        .rank(&a.category)
        .cmp(&priority.rank(&b.category))
        .then_with(|| {
            distance(&a.position_world, last_position).total_cmp(&distance(&b.position_world, last_position))
        })
        .then_with(|| a.id.cmp(&b.id))
}

/// The current ready set sorted by [`compare_ready`].
pub fn rank_ready(graph: &PartGraph, priority: &ClassPriority, last_position: &Point) -> Vec<PartId> {
    let mut ready: Vec<&PartNode> = graph
        .ready_set()
        .into_iter()
        .filter_map(|id| graph.node(id))
        .collect();
    ready.sort_by(|a, b| compare_ready(a, b, priority, last_position));
    ready.into_iter().map(|n| n.id).collect()
}

/// Kahn's algorithm with a comparator-ordered frontier. After each pick the
/// reference point moves to the picked node, so nearby parts are grouped.
/// Every node in the graph is ordered regardless of its state.
pub fn topo_order(graph: &PartGraph, priority: &ClassPriority, last_position: &Point) -> Result<Vec<PartId>, SequenceError> {
    let mut indeg: BTreeMap<PartId, usize> = graph.nodes().map(|n| (n.id, 0)).collect();
    for e in graph.edges() {
        *indeg.get_mut(&e.to).expect("edge endpoint present") += 1;
    }
    let mut frontier: Vec<&PartNode> = graph.nodes().filter(|n| indeg[&n.id] == 0).collect();
    let mut order = Vec::with_capacity(indeg.len());
    let mut reference = *last_position;
    while !frontier.is_empty() {
        let (best, _) = frontier
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| compare_ready(a, b, priority, &reference))
            .expect("non-empty frontier");
        let node = frontier.swap_remove(best);
        order.push(node.id);
        reference = node.position_world;
        for s in graph.successors(node.id) {
            let d = indeg.get_mut(&s).expect("successor present");
            *d -= 1;
            if *d == 0 {
                frontier.push(graph.node(s).expect("successor present"));
            }
        }
    }
    if order.len() != indeg.len() {
        return Err(SequenceError::Cycle {
            remaining: indeg.len() - order.len(),
        });
    }
    Ok(order)
}

/// Builds the action chain for one node from every template declared for
/// its category, in declaration order.
pub fn instantiate(node: &PartNode, templates: &[ActionTemplate]) -> Result<Vec<ActionPrimitive>, SequenceError> {
    let chain: Vec<ActionPrimitive> = templates
        .iter()
        .filter(|t| t.applicable_category == node.category)
        .enumerate()
        .map(|(step, t)| ActionPrimitive {
            id: ActionId::new(node.id, step),
            action_kind: t.action_kind,
            target_node: node.id,
            target_position: node.position_world,
            capability_required: t.capability_required.clone(),
            workspace_region: WorkspaceRegion {
                center: node.position_world,
                radius: t.region_radius,
            },
            retries_used: 0,
            approach_offset: t.approach_offset,
            nominal_speed: t.nominal_speed,
            tool_params: t.tool_params.clone(),
            hold_partner: None,
        })
        .collect();
    if chain.is_empty() {
        return Err(SequenceError::UnsupportedCategory(node.category.clone()));
    }
    Ok(chain)
}

/// Target is still on the graph, unblocked, and nobody is working on it.
pub fn check_preconditions(action: &ActionPrimitive, graph: &PartGraph) -> bool {
    match graph.node(action.target_node) {
        Some(n) => n.state == NodeState::Present && graph.in_degree(n.id) == 0,
        None => false,
    }
}
