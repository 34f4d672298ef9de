//! Dual-arm dispatch: capability filtering, spatial/graph non-interference,
//! hold–operate pairing and failure requeueing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;
use crate::model::{Capability, PartId};
use crate::partgraph::{GraphError, NodeState, PartGraph};
use crate::sequencer::{check_preconditions, ActionKind, ActionPrimitive};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("no arm offers capability {0}")]
    Unassignable(Capability),
    #[error("arm {arm}: illegal state change {from:?} -> {to:?}")]
    IllegalArmTransition { arm: String, from: ArmState, to: ArmState },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArmState {
    Idle,
    Moving,
    Acting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmProfile {
    pub name: String,
    pub capabilities: BTreeSet<Capability>,
    pub home_pose: Point,
    /// Cartesian speed for free moves, m/s.
    pub speed: f64,
    pub state: ArmState,
    pub current_position: Point,
    /// Position of the last part this arm worked on; reference point for
    /// the short-move tie-breaker.
    pub last_target: Point,
    /// Bin for parts released at the end of an action, keyed by the
    /// capability of that action.
    pub drop_poses: BTreeMap<Capability, Point>,
}

impl ArmProfile {
    pub fn new(name: &str, capabilities: &[&str], home_pose: Point, speed: f64, drop_pose: Point) -> Self {
        let capabilities: BTreeSet<Capability> = capabilities.iter().map(|&c| c.into()).collect();
        let drop_poses = capabilities.iter().map(|c| (c.clone(), drop_pose)).collect();
        ArmProfile {
            name: name.to_owned(),
            capabilities,
            home_pose,
            speed,
            state: ArmState::Idle,
            current_position: home_pose,
            last_target: home_pose,
            drop_poses,
        }
    }

    pub fn can(&self, capability: &Capability) -> bool {
        self.capabilities.contains(capability)
    }

    pub fn is_idle(&self) -> bool {
        self.state == ArmState::Idle
    }

    pub fn drop_pose_for(&self, capability: &Capability) -> Point {
        self.drop_poses
            .get(capability)
            .or_else(|| self.drop_poses.values().next())
            .copied()
            .unwrap_or(self.home_pose)
    }

    /// Enforces `idle → moving → acting → idle`.
    pub fn transition(&mut self, to: ArmState) -> Result<(), ScheduleError> {
        let ok = matches!(
            (self.state, to),
            (ArmState::Idle, ArmState::Moving) | (ArmState::Moving, ArmState::Acting) | (ArmState::Acting, ArmState::Idle)
        );
        if !ok {
            return Err(ScheduleError::IllegalArmTransition {
                arm: self.name.clone(),
                from: self.state,
                to,
            });
        }
        self.state = to;
        Ok(())
    }

    /// One arm doing everything: union of capabilities and bins, the
    /// slower of the two speeds.
    pub fn merged(name: &str, arms: &[ArmProfile]) -> ArmProfile {
        let first = &arms[0];
        let mut merged = first.clone();
        merged.name = name.to_owned();
        for arm in &arms[1..] {
            merged.capabilities.extend(arm.capabilities.iter().cloned());
            for (cap, pose) in &arm.drop_poses {
                merged.drop_poses.entry(cap.clone()).or_insert(*pose);
            }
            merged.speed = merged.speed.min(arm.speed);
        }
        merged
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Index into the arm list.
    pub arm: usize,
    pub action: ActionPrimitive,
    /// Index of the assignment this one is synchronised with (hold–operate).
    pub synchronized_with: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DispatchSet {
    pub assignments: Vec<Assignment>,
}

impl DispatchSet {
    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn for_arm(&self, arm: usize) -> Option<&Assignment> {
        self.assignments.iter().find(|a| a.arm == arm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub pose_offset_mm: f64,
    /// Unit directions cycled through, one per retry.
    pub offset_pattern: Vec<(f64, f64)>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            pose_offset_mm: 0.5,
            offset_pattern: vec![
                (1.0, 0.0),
                (-1.0, 0.0),
                (0.0, 1.0),
                (0.0, -1.0),
                (1.0, 1.0),
                (-1.0, -1.0),
                (1.0, -1.0),
                (-1.0, 1.0),
            ],
        }
    }
}

impl RetryPolicy {
    pub fn single_attempt() -> Self {
        RetryPolicy {
            max_retries: 0,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FailureOutcome {
    Requeued(ActionPrimitive),
    Abandoned,
}

/// Splits the ready actions into one list per arm, keeping input order.
pub fn capability_filter(ready_actions: &[ActionPrimitive], arms: &[ArmProfile]) -> Result<Vec<Vec<ActionPrimitive>>, ScheduleError> {
    let mut lists = vec![Vec::new(); arms.len()];
    for action in ready_actions {
        let mut owned = false;
        for (i, arm) in arms.iter().enumerate() {
            if arm.can(&action.capability_required) {
                lists[i].push(action.clone());
                owned = true;
            }
        }
        if !owned {
            return Err(ScheduleError::Unassignable(action.capability_required.clone()));
        }
    }
    Ok(lists)
}

/// Overlapping workspace spheres or a direct graph edge between targets.
pub fn interfering(a: &ActionPrimitive, b: &ActionPrimitive, graph: &PartGraph) -> bool {
    a.workspace_region.overlaps(&b.workspace_region)
        || a.target_node == b.target_node
        || graph.adjacent(a.target_node, b.target_node)
}

/// Greedy dispatch in fixed arm order: each idle arm takes its best-ranked
/// candidate that passes the graph preconditions and does not interfere
/// with anything already running or chosen this round. A candidate with a
/// hold partner also claims an idle holding arm.
pub fn select_dispatch(
    candidates: &[Vec<ActionPrimitive>],
    arms: &[ArmProfile],
    graph: &PartGraph,
    in_flight: &[ActionPrimitive],
) -> DispatchSet {
    let mut set = DispatchSet::default();
    let mut busy: Vec<bool> = arms.iter().map(|a| !a.is_idle()).collect();
    let mut committed: Vec<ActionPrimitive> = in_flight.to_vec();

    for arm_idx in 0..arms.len() {
        if busy[arm_idx] {
            continue;
        }
        let Some(list) = candidates.get(arm_idx) else {
            continue;
        };
        for cand in list {
            if !arms[arm_idx].can(&cand.capability_required) || !check_preconditions(cand, graph) {
                continue;
            }
            if committed.iter().any(|c| interfering(cand, c, graph)) {
                continue;
            }
            match &cand.hold_partner {
                None => {
                    set.assignments.push(Assignment {
                        arm: arm_idx,
                        action: cand.clone(),
                        synchronized_with: None,
                    });
                    busy[arm_idx] = true;
                    committed.push(cand.clone());
                }
                Some(hold) => {
                    let holder = (0..arms.len())
                        .find(|&j| j != arm_idx && !busy[j] && arms[j].can(&hold.capability_required));
                    let Some(holder) = holder else { continue };
                    if committed.iter().any(|c| interfering(hold, c, graph)) {
                        continue;
                    }
                    let base = set.assignments.len();
                    set.assignments.push(Assignment {
                        arm: arm_idx,
                        action: cand.clone(),
                        synchronized_with: Some(base + 1),
                    });
                    set.assignments.push(Assignment {
                        arm: holder,
                        action: (**hold).clone(),
                        synchronized_with: Some(base),
                    });
                    busy[arm_idx] = true;
                    busy[holder] = true;
                    committed.push(cand.clone());
                    committed.push((**hold).clone());
                }
            }
            break;
        }
    }
    set
}

/// Requeues a failed action with the next pose offset, or gives up once
/// the retry budget is spent.
pub fn handle_failure(action: &ActionPrimitive, policy: &RetryPolicy) -> FailureOutcome {
    if action.retries_used >= policy.max_retries {
        return FailureOutcome::Abandoned;
    }
    let mut next = action.clone();
    if !policy.offset_pattern.is_empty() {
        let (dx, dy) = policy.offset_pattern[action.retries_used as usize % policy.offset_pattern.len()];
        let step = policy.pose_offset_mm / 1000.0;
        next.target_position.x += dx * step;
        next.target_position.y += dy * step;
    }
    next.retries_used += 1;
    FailureOutcome::Requeued(next)
}

/// Applies a successful action to the graph. Terminal kinds remove the
/// target; the returned ids are the nodes this removal unblocked.
pub fn on_complete(graph: &mut PartGraph, action: &ActionPrimitive) -> Result<Vec<PartId>, ScheduleError> {
    if !action.action_kind.is_terminal() {
        return Ok(Vec::new());
    }
    let successors: Vec<PartId> = graph.successors(action.target_node).collect();
    graph.remove_node(action.target_node)?;
    Ok(successors
        .into_iter()
        .filter(|&s| {
            graph.in_degree(s) == 0 && graph.node(s).is_some_and(|n| n.state == NodeState::Present)
        })
        .collect())
}

/// Whether `kind` keeps the arm holding the part for a follow-up step.
pub fn continues_chain(kind: ActionKind) -> bool {
    matches!(kind, ActionKind::Lift | ActionKind::Remove)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;
    use crate::partgraph::{CategoryRule, EdgeKind, PartNode, RuleScope};
    use crate::sequencer::{ActionId, WorkspaceRegion};

    fn action(node: u32, kind: ActionKind, cap: &str, x: f64, r: f64) -> ActionPrimitive {
        let p = Point::new(x, 0.0, 0.0);
        ActionPrimitive {
            id: ActionId::new(PartId(node), 0),
            action_kind: kind,
            target_node: PartId(node),
            target_position: p,
            capability_required: cap.into(),
            workspace_region: WorkspaceRegion { center: p, radius: r },
            retries_used: 0,
            approach_offset: 0.0,
            nominal_speed: 0.1,
            tool_params: Default::default(),
            hold_partner: None,
        }
    }

    fn arms() -> Vec<ArmProfile> {
        vec![
            ArmProfile::new("tooling", &["unscrew"], Point::origin(), 0.2, Point::origin()),
            ArmProfile::new("manipulation", &["lift", "remove", "drop", "hold"], Point::origin(), 0.2, Point::origin()),
        ]
    }

    fn flat_graph(ids: &[(u32, &str, f64)], rules: &[CategoryRule]) -> PartGraph {
        PartGraph::build(
            ids.iter()
                .map(|&(i, c, x)| PartNode::new(PartId(i), c, Point::new(x, 0.0, 0.0), Layer::L1))
                .collect(),
            rules,
        )
        .unwrap()
    }

    #[test]
    fn filter_by_capability() {
        let acts = vec![
            action(0, ActionKind::Unscrew, "unscrew", 0.0, 0.05),
            action(1, ActionKind::Lift, "lift", 0.5, 0.05),
        ];
        let lists = capability_filter(&acts, &arms()).unwrap();
        assert_eq!(lists[0].len(), 1);
        assert_eq!(lists[0][0].target_node, PartId(0));
        assert_eq!(lists[1][0].target_node, PartId(1));
        assert_eq!(capability_filter(&[], &arms()).unwrap(), vec![vec![], vec![]]);
        let weld = action(2, ActionKind::Unscrew, "weld", 0.0, 0.05);
        assert_eq!(capability_filter(&[weld], &arms()), Err(ScheduleError::Unassignable("weld".into())));
    }

    #[test]
    fn interference_cases() {
        let g = flat_graph(&[(0, "screw", 0.0), (1, "screw", 0.2), (2, "lid", 5.0)], &[
            CategoryRule::new("screw", "lid", EdgeKind::Precedence, RuleScope::SameLayer),
        ]);
        let a = action(0, ActionKind::Unscrew, "unscrew", 0.0, 0.05);
        let b = action(1, ActionKind::Unscrew, "unscrew", 0.2, 0.05);
        assert!(!interfering(&a, &b, &g));
        let c = action(1, ActionKind::Unscrew, "unscrew", 0.06, 0.05);
        assert!(interfering(&a, &c, &g));
        let lid = action(2, ActionKind::Lift, "lift", 5.0, 0.05);
        assert!(interfering(&a, &lid, &g));
    }

    #[test]
    fn independent_actions_both_dispatch() {
        let g = flat_graph(&[(0, "screw", 0.0), (1, "PCB", 0.6)], &[]);
        let cands = vec![
            vec![action(0, ActionKind::Unscrew, "unscrew", 0.0, 0.05)],
            vec![action(1, ActionKind::Drop, "drop", 0.6, 0.05)],
        ];
        let set = select_dispatch(&cands, &arms(), &g, &[]);
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn conflicting_tops_fall_back() {
        let g = flat_graph(&[(0, "screw", 0.0), (1, "PCB", 0.02), (2, "case", 0.5)], &[]);
        let cands = vec![
            vec![action(0, ActionKind::Unscrew, "unscrew", 0.0, 0.05)],
            vec![
                action(1, ActionKind::Lift, "lift", 0.02, 0.05),
                action(2, ActionKind::Lift, "lift", 0.5, 0.05),
            ],
        ];
        let set = select_dispatch(&cands, &arms(), &g, &[]);
        assert_eq!(set.for_arm(0).unwrap().action.target_node, PartId(0));
        assert_eq!(set.for_arm(1).unwrap().action.target_node, PartId(2));

        // nothing else available: second arm idles
        let cands = vec![cands[0].clone(), vec![action(1, ActionKind::Lift, "lift", 0.02, 0.05)]];
        let set = select_dispatch(&cands, &arms(), &g, &[]);
        assert_eq!(set.len(), 1);
        assert!(select_dispatch(&[vec![], vec![]], &arms(), &g, &[]).is_empty());
    }

    #[test]
    fn respects_in_flight_and_busy_arms() {
        let g = flat_graph(&[(0, "screw", 0.0), (1, "PCB", 0.02)], &[]);
        let running = action(0, ActionKind::Unscrew, "unscrew", 0.0, 0.05);
        let mut a = arms();
        a[0].state = ArmState::Acting;
        let cands = vec![vec![], vec![action(1, ActionKind::Lift, "lift", 0.02, 0.05)]];
        assert!(select_dispatch(&cands, &a, &g, &[running]).is_empty());
    }

    #[test]
    fn hold_claims_second_arm() {
        let g = flat_graph(&[(0, "pcb_screw", 0.0), (1, "PCB", 0.01)], &[
            CategoryRule::new("pcb_screw", "PCB", EdgeKind::Precedence, RuleScope::SameLayer),
        ]);
        let mut op = action(0, ActionKind::Unscrew, "unscrew", 0.0, 0.05);
        op.hold_partner = Some(Box::new(action(1, ActionKind::Hold, "hold", 0.01, 0.05)));
        let set = select_dispatch(&[vec![op.clone()], vec![]], &arms(), &g, &[]);
        assert_eq!(set.len(), 2);
        assert_eq!(set.assignments[0].synchronized_with, Some(1));
        assert_eq!(set.assignments[1].action.action_kind, ActionKind::Hold);

        let mut a = arms();
        a[1].state = ArmState::Moving;
        assert!(select_dispatch(&[vec![op], vec![]], &a, &g, &[]).is_empty());
    }

    #[test]
    fn retry_offsets_and_bound() {
        let policy = RetryPolicy {
            max_retries: 2,
            pose_offset_mm: 0.5,
            offset_pattern: vec![(1.0, 0.0)],
        };
        let a = action(0, ActionKind::Unscrew, "unscrew", 0.0, 0.05);
        let FailureOutcome::Requeued(r) = handle_failure(&a, &policy) else { panic!() };
        assert_eq!(r.retries_used, 1);
        assert!((r.target_position.x - 0.0005).abs() < 1e-15);
        let mut spent = a.clone();
        spent.retries_used = 2;
        assert_eq!(handle_failure(&spent, &policy), FailureOutcome::Abandoned);
        assert_eq!(handle_failure(&a, &RetryPolicy::single_attempt()), FailureOutcome::Abandoned);
    }

    #[test]
    fn default_pattern_walks_and_returns() {
        let p = RetryPolicy::default();
        let mut a = action(0, ActionKind::Unscrew, "unscrew", 0.0, 0.05);
        for expect in [(0.0005, 0.0), (0.0, 0.0), (0.0, 0.0005), (0.0, 0.0)] {
            let FailureOutcome::Requeued(next) = handle_failure(&a, &p) else { panic!() };
            assert!((next.target_position.x - expect.0).abs() < 1e-12);
            assert!((next.target_position.y - expect.1).abs() < 1e-12);
            a = next;
        }
    }

    #[test]
    fn completion_unblocks() {
        let rules = [
            CategoryRule::new("screw", "lid", EdgeKind::Precedence, RuleScope::SameLayer),
            CategoryRule::new("PCB", "case", EdgeKind::Precedence, RuleScope::SameLayer),
        ];
        let mut g = flat_graph(&[(0, "screw", 0.0), (1, "screw", 0.1), (2, "lid", 0.0), (3, "PCB", 1.0), (4, "case", 1.0)], &rules);
        let s0 = action(0, ActionKind::Unscrew, "unscrew", 0.0, 0.05);
        assert!(on_complete(&mut g, &s0).unwrap().is_empty());
        let s1 = action(1, ActionKind::Unscrew, "unscrew", 0.1, 0.05);
        assert_eq!(on_complete(&mut g, &s1).unwrap(), vec![PartId(2)]);
        let pcb = action(3, ActionKind::Drop, "drop", 1.0, 0.05);
        assert_eq!(on_complete(&mut g, &pcb).unwrap(), vec![PartId(4)]);
        let lift = action(2, ActionKind::Lift, "lift", 0.0, 0.05);
        assert!(on_complete(&mut g, &lift).unwrap().is_empty());
        assert!(g.contains(PartId(2)));
    }

    #[test]
    fn arm_state_machine() {
        let mut a = arms().remove(0);
        a.transition(ArmState::Moving).unwrap();
        assert!(a.transition(ArmState::Idle).is_err());
        a.transition(ArmState::Acting).unwrap();
        a.transition(ArmState::Idle).unwrap();
    }

    #[test]
    fn merged_arm_has_everything() {
        let m = ArmProfile::merged("solo", &arms());
        assert!(m.can(&"unscrew".into()) && m.can(&"hold".into()));
        assert_eq!(m.speed, 0.2);
    }
}
