//! Live precedence graph over the parts currently known to be on the device.
//!
//! An edge `a -> b` means `a` has to be cleared before `b` may be removed.
//! Edges come only from category-level rules, so the edge set is always a
//! function of the node set and the rule list.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;
use crate::model::{Category, Layer, PartId};
use crate::perception::TrackedPart;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("rules create a cycle through {0:?}")]
    RuleCycle(Vec<PartId>),
    #[error("node {0} not found")]
    NotFound(PartId),
    #[error("node id {0} already used")]
    DuplicateId(PartId),
    #[error("node {id}: illegal state change {from:?} -> {to:?}")]
    IllegalTransition { id: PartId, from: NodeState, to: NodeState },
    #[error("malformed graph dump line {line}: {text}")]
    BadDump { line: usize, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeState {
    Present,
    InProgress,
    Removed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartNode {
    pub id: PartId,
    pub category: Category,
    pub position_world: Point,
    pub layer: Layer,
    pub state: NodeState,
}

impl PartNode {
    pub fn new(id: PartId, category: impl Into<Category>, position_world: Point, layer: Layer) -> Self {
        PartNode {
            id,
            category: category.into(),
            position_world,
            layer,
            state: NodeState::Present,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Precedence,
    Access,
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            EdgeKind::Precedence => "precedence",
            EdgeKind::Access => "access",
        })
    }
}

impl FromStr for EdgeKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "precedence" => Ok(EdgeKind::Precedence),
            "access" => Ok(EdgeKind::Access),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PrecedenceEdge {
    pub from: PartId,
    pub to: PartId,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleScope {
    SameLayer,
    CrossLayer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRule {
    #[serde(rename = "from")]
    pub from_category: Category,
    #[serde(rename = "to")]
    pub to_category: Category,
    #[serde(default = "default_kind")]
    pub kind: EdgeKind,
    #[serde(default = "default_scope")]
    pub scope: RuleScope,
}

fn default_kind() -> EdgeKind {
    EdgeKind::Precedence
}

fn default_scope() -> RuleScope {
    RuleScope::SameLayer
}

impl CategoryRule {
    pub fn new(from: &str, to: &str, kind: EdgeKind, scope: RuleScope) -> Self {
        CategoryRule {
            from_category: from.into(),
            to_category: to.into(),
            kind,
            scope,
        }
    }

    fn matches(&self, a: &PartNode, b: &PartNode) -> bool {
        a.id != b.id
            && a.category == self.from_category
            && b.category == self.to_category
            && (self.scope == RuleScope::CrossLayer || a.layer == b.layer)
    }
}

/// Instantiates every rule over every ordered node pair. When two rules
/// yield the same pair the earlier rule's kind is kept.
pub fn apply_rules<'a, I>(nodes: I, rules: &[CategoryRule]) -> Result<Vec<PrecedenceEdge>, GraphError>
where
    I: IntoIterator<Item = &'a PartNode>,
{
    let nodes: Vec<&PartNode> = nodes.into_iter().collect();
    let edges = rule_edges(&nodes, rules);
    let ids: Vec<PartId> = nodes.iter().map(|n| n.id).collect();
    if let Some(cycle) = find_cycle(&ids, &edges) {
        return Err(GraphError::RuleCycle(cycle));
    }
    Ok(edges
        .into_iter()
        .map(|((from, to), kind)| PrecedenceEdge { from, to, kind })
        .collect())
}

fn rule_edges(nodes: &[&PartNode], rules: &[CategoryRule]) -> BTreeMap<(PartId, PartId), EdgeKind> {
    let mut edges = BTreeMap::new();
    for rule in rules {
        for a in nodes.iter().filter(|n| n.category == rule.from_category) {
            for b in nodes.iter().filter(|n| n.category == rule.to_category) {
                if rule.matches(a, b) {
                    edges.entry((a.id, b.id)).or_insert(rule.kind);
                }
            }
        }
    }
    edges
}

/// Returns one directed cycle if the edge set has any.
pub fn find_cycle(ids: &[PartId], edges: &BTreeMap<(PartId, PartId), EdgeKind>) -> Option<Vec<PartId>> {
    let mut adj: BTreeMap<PartId, Vec<PartId>> = ids.iter().map(|&i| (i, Vec::new())).collect();
    for &(a, b) in edges.keys() {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default();
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut color: BTreeMap<PartId, u8> = adj.keys().map(|&k| (k, 0)).collect();
    let roots: Vec<PartId> = adj.keys().copied().collect();
    for root in roots {
        if color[&root] != 0 {
            continue;
        }
        let mut stack: Vec<(PartId, usize)> = vec![(root, 0)];
        color.insert(root, 1);
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            let succ = &adj[&node];
            if *next < succ.len() {
                let s = succ[*next];
                *next += 1;
                match color[&s] {
                    0 => {
                        color.insert(s, 1);
                        stack.push((s, 0));
                    }
                    1 => {
                        let start = stack.iter().position(|&(n, _)| n == s).unwrap();
                        return Some(stack[start..].iter().map(|&(n, _)| n).collect());
                    }
                    _ => {}
                }
            } else {
                color.insert(node, 2);
                stack.pop();
            }
        }
    }
    None
}

/// One observable change produced by [`PartGraph::sync_with_observations`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphChange {
    Added(PartId),
    Removed(PartId),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartGraph {
    nodes: BTreeMap<PartId, PartNode>,
    edges: BTreeMap<(PartId, PartId), EdgeKind>,
    /// Ids that were removed and must never come back under the same id.
    retired: BTreeSet<PartId>,
}

impl PartGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from scratch, rejecting cyclic rule sets.
    pub fn build(nodes: Vec<PartNode>, rules: &[CategoryRule]) -> Result<Self, GraphError> {
        let mut g = PartGraph::new();
        g.insert_nodes(nodes, rules)?;
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: PartId) -> Option<&PartNode> {
        self.nodes.get(&id)
    }

    pub fn contains(&self, id: PartId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn is_retired(&self, id: PartId) -> bool {
        self.retired.contains(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &PartNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = PrecedenceEdge> + '_ {
        self.edges
            .iter()
            .map(|(&(from, to), &kind)| PrecedenceEdge { from, to, kind })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, from: PartId, to: PartId) -> bool {
        self.edges.contains_key(&(from, to))
    }

    /// True when an edge joins `a` and `b` in either direction.
    pub fn adjacent(&self, a: PartId, b: PartId) -> bool {
        self.has_edge(a, b) || self.has_edge(b, a)
    }

    pub fn in_degree(&self, id: PartId) -> usize {
        self.edges.keys().filter(|&&(_, to)| to == id).count()
    }

    pub fn predecessors(&self, id: PartId) -> impl Iterator<Item = PartId> + '_ {
        self.edges.keys().filter(move |&&(_, to)| to == id).map(|&(from, _)| from)
    }

    pub fn successors(&self, id: PartId) -> impl Iterator<Item = PartId> + '_ {
        self.edges
            .range((id, PartId(0))..=(id, PartId(u32::MAX)))
            .map(|(&(_, to), _)| to)
    }

    /// Present (not in-progress) nodes with no incoming edge.
    pub fn ready_set(&self) -> BTreeSet<PartId> {
        let blocked: BTreeSet<PartId> = self.edges.keys().map(|&(_, to)| to).collect();
        self.nodes
            .values()
            .filter(|n| n.state == NodeState::Present && !blocked.contains(&n.id))
            .map(|n| n.id)
            .collect()
    }

    pub fn is_acyclic(&self) -> bool {
        let ids: Vec<PartId> = self.nodes.keys().copied().collect();
        find_cycle(&ids, &self.edges).is_none()
    }

    pub fn set_state(&mut self, id: PartId, state: NodeState) -> Result<(), GraphError> {
        let node = self.nodes.get_mut(&id).ok_or(GraphError::NotFound(id))?;
        let legal = matches!(
            (node.state, state),
            (NodeState::Present, NodeState::InProgress) | (NodeState::InProgress, NodeState::Present)
        ) || node.state == state;
        if !legal {
            return Err(GraphError::IllegalTransition {
                id,
                from: node.state,
                to: state,
            });
        }
        node.state = state;
        Ok(())
    }

    pub fn set_position(&mut self, id: PartId, position: Point) -> Result<(), GraphError> {
        let node = self.nodes.get_mut(&id).ok_or(GraphError::NotFound(id))?;
        node.position_world = position;
        Ok(())
    }

    /// Drops `id` and its incident edges. Returns the removed node.
    pub fn remove_node(&mut self, id: PartId) -> Result<PartNode, GraphError> {
        let mut node = self.nodes.remove(&id).ok_or(GraphError::NotFound(id))?;
        self.edges.retain(|&(a, b), _| a != id && b != id);
        self.retired.insert(id);
        node.state = NodeState::Removed;
        Ok(node)
    }

    /// Adds nodes and re-evaluates the rules over the union. The graph is
    /// left untouched when the result would be cyclic.
    pub fn insert_nodes(&mut self, new_nodes: Vec<PartNode>, rules: &[CategoryRule]) -> Result<(), GraphError> {
        let mut seen = BTreeSet::new();
        for n in &new_nodes {
            if self.nodes.contains_key(&n.id) || self.retired.contains(&n.id) || !seen.insert(n.id) {
                return Err(GraphError::DuplicateId(n.id));
            }
        }
        if new_nodes.is_empty() {
            return Ok(());
        }
        let all: Vec<&PartNode> = self.nodes.values().chain(new_nodes.iter()).collect();
        let edges = rule_edges(&all, rules);
        let ids: Vec<PartId> = all.iter().map(|n| n.id).collect();
        if let Some(cycle) = find_cycle(&ids, &edges) {
            return Err(GraphError::RuleCycle(cycle));
        }
        for n in new_nodes {
            self.nodes.insert(n.id, n);
        }
        self.edges = edges;
        Ok(())
    }

    /// Reconciles the graph with the perceived scene: present nodes without
    /// a live track are dropped, unseen tracks become nodes. In-progress
    /// nodes are kept regardless since an arm is working on them.
    pub fn sync_with_observations<F>(
        &mut self,
        observed: &[TrackedPart],
        rules: &[CategoryRule],
        layer_of: F,
    ) -> Result<Vec<GraphChange>, GraphError>
    where
        F: Fn(&Category) -> Layer,
    {
        let seen: BTreeMap<PartId, &TrackedPart> = observed.iter().map(|t| (t.id, t)).collect();
        let mut changes = Vec::new();

        let vanished: Vec<PartId> = self
            .nodes
            .values()
            .filter(|n| n.state == NodeState::Present && !seen.contains_key(&n.id))
            .map(|n| n.id)
            .collect();
        for id in vanished {
            self.remove_node(id)?;
            changes.push(GraphChange::Removed(id));
        }

        let mut fresh = Vec::new();
        for (id, t) in &seen {
            if let Some(n) = self.nodes.get_mut(id) {
                n.position_world = t.smoothed_position;
            } else if !self.retired.contains(id) {
                fresh.push(PartNode::new(*id, t.category.clone(), t.smoothed_position, layer_of(&t.category)));
            }
        }
        let added: Vec<PartId> = fresh.iter().map(|n| n.id).collect();
        self.insert_nodes(fresh, rules)?;
        changes.extend(added.into_iter().map(GraphChange::Added));
        Ok(changes)
    }

    /// Plain-text adjacency listing, one `from -> to [kind]` line per edge.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in self.edges() {
            writeln!(out, "{} -> {} [{}]", e.from, e.to, e.kind).unwrap();
        }
        out
    }
}

/// Parses the output of [`PartGraph::dump`].
pub fn parse_dump(text: &str) -> Result<Vec<PrecedenceEdge>, GraphError> {
    let parse_id = |s: &str| s.strip_prefix('n').and_then(|n| n.parse().ok()).map(PartId);
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || GraphError::BadDump {
            line: i + 1,
            text: line.to_owned(),
        };
        let (lhs, rest) = line.split_once(" -> ").ok_or_else(bad)?;
        let (rhs, kind) = rest.split_once(" [").ok_or_else(bad)?;
        let kind = kind.strip_suffix(']').and_then(|k| k.parse().ok()).ok_or_else(bad)?;
        edges.push(PrecedenceEdge {
            from: parse_id(lhs).ok_or_else(bad)?,
            to: parse_id(rhs).ok_or_else(bad)?,
            kind,
        });
    }
    Ok(edges)
}
