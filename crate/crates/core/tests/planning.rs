use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use teardown_core::partgraph::RuleScope;
use teardown_core::perception::{back_project, CameraModel};
use teardown_core::scheduler::{capability_filter, handle_failure, interfering, select_dispatch, FailureOutcome};
use teardown_core::sequencer::{check_preconditions, instantiate, rank_ready, topo_order};
use teardown_core::{
    ActionKind, ActionTemplate, ArmProfile, CategoryRule, ClassPriority, EdgeKind, Layer, PartGraph, PartId, PartNode,
    Point, RetryPolicy,
};

#[derive(Debug, Clone)]
struct RandomDag {
    positions: Vec<(f64, f64)>,
    edges: BTreeSet<(usize, usize)>,
}

fn random_dag() -> impl Strategy<Value = RandomDag> {
    (2usize..12).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        (
            prop::collection::vec((-0.2f64..0.2, -0.2f64..0.2), n),
            prop::collection::vec(prop::bool::weighted(0.3), pairs.len()),
        )
            .prop_map(move |(positions, keep)| RandomDag {
                positions,
                edges: pairs.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect(),
            })
    })
}

fn category(i: usize) -> String {
    format!("c{i}")
}

fn nodes(dag: &RandomDag) -> Vec<PartNode> {
    dag.positions
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| PartNode::new(PartId(i as u32), category(i).as_str(), Point::new(x, y, 0.0), Layer::L1))
        .collect()
}

fn rules(dag: &RandomDag) -> Vec<CategoryRule> {
    dag.edges
        .iter()
        .map(|&(a, b)| CategoryRule::new(&category(a), &category(b), EdgeKind::Precedence, RuleScope::SameLayer))
        .collect()
}

fn build(dag: &RandomDag) -> PartGraph {
    PartGraph::build(nodes(dag), &rules(dag)).unwrap()
}

fn templates(dag: &RandomDag) -> Vec<ActionTemplate> {
    (0..dag.positions.len())
        .map(|i| {
            let (kind, cap) = if i % 2 == 0 { (ActionKind::Unscrew, "unscrew") } else { (ActionKind::Lift, "lift") };
            ActionTemplate {
                action_kind: kind,
                applicable_category: category(i).as_str().into(),
                approach_offset: 0.02,
                nominal_speed: 0.2,
                tool_params: BTreeMap::new(),
                capability_required: cap.into(),
                region_radius: 0.03,
            }
        })
        .collect()
}

fn arms() -> Vec<ArmProfile> {
    vec![
        ArmProfile::new("tooling", &["unscrew"], Point::new(0.3, 0.0, 0.2), 0.2, Point::new(0.3, 0.1, 0.0)),
        ArmProfile::new("manipulation", &["lift"], Point::new(-0.3, 0.0, 0.2), 0.2, Point::new(-0.3, 0.1, 0.0)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn topo_order_is_a_linear_extension(dag in random_dag()) {
        let graph = build(&dag);
        prop_assert!(graph.is_acyclic());
        prop_assert_eq!(graph.edge_count(), dag.edges.len());
        let order = topo_order(&graph, &ClassPriority(Vec::new()), &Point::origin()).unwrap();
        prop_assert_eq!(order.len(), dag.positions.len());
        let at: BTreeMap<PartId, usize> = order.iter().enumerate().map(|(k, id)| (*id, k)).collect();
        prop_assert_eq!(at.len(), order.len());
        for e in graph.edges() {
            prop_assert!(at[&e.from] < at[&e.to]);
        }
    }

    #[test]
    fn closing_a_cycle_is_rejected(dag in random_dag()) {
        prop_assume!(!dag.edges.is_empty());
        let &(a, b) = dag.edges.iter().next().unwrap();
        let mut rs = rules(&dag);
        rs.push(CategoryRule::new(&category(b), &category(a), EdgeKind::Precedence, RuleScope::SameLayer));
        prop_assert!(PartGraph::build(nodes(&dag), &rs).is_err());
    }

    #[test]
    fn peeling_ready_nodes_empties_the_graph(dag in random_dag()) {
        let mut graph = build(&dag);
        let priority = ClassPriority(Vec::new());
        let mut last = Point::origin();
        while !graph.is_empty() {
            let ready = rank_ready(&graph, &priority, &last);
            prop_assert!(!ready.is_empty());
            let id = ready[0];
            prop_assert_eq!(graph.in_degree(id), 0);
            last = graph.node(id).unwrap().position_world;
            graph.remove_node(id).unwrap();
        }
    }

    #[test]
    fn dispatch_sets_are_safe(dag in random_dag()) {
        let graph = build(&dag);
        let tpl = templates(&dag);
        let arms = arms();
        let ready: Vec<_> = rank_ready(&graph, &ClassPriority(Vec::new()), &Point::origin())
            .into_iter()
            .map(|id| instantiate(graph.node(id).unwrap(), &tpl).unwrap().remove(0))
            .collect();
        let lists = capability_filter(&ready, &arms).unwrap();
        let set = select_dispatch(&lists, &arms, &graph, &[]);
        prop_assert!(!set.is_empty());
        let mut used = BTreeSet::new();
        for (i, a) in set.assignments.iter().enumerate() {
            prop_assert!(used.insert(a.arm));
            prop_assert!(arms[a.arm].can(&a.action.capability_required));
            prop_assert!(check_preconditions(&a.action, &graph));
            for b in &set.assignments[i + 1..] {
                prop_assert!(!interfering(&a.action, &b.action, &graph));
            }
        }
    }

    #[test]
    fn retries_run_out(max in 0u32..10) {
        let node = PartNode::new(PartId(1), "s", Point::origin(), Layer::L1);
        let tpl = vec![ActionTemplate {
            action_kind: ActionKind::Unscrew,
            applicable_category: "s".into(),
            approach_offset: 0.0,
            nominal_speed: 0.1,
            tool_params: BTreeMap::new(),
            capability_required: "unscrew".into(),
            region_radius: 0.05,
        }];
        let policy = RetryPolicy { max_retries: max, ..RetryPolicy::default() };
        let mut action = instantiate(&node, &tpl).unwrap().remove(0);
        let mut requeues = 0;
        while let FailureOutcome::Requeued(next) = handle_failure(&action, &policy) {
            let shift = (next.target_position - action.target_position).norm();
            prop_assert!(shift > 0.0 && shift < 1e-3);
            action = next;
            requeues += 1;
        }
        prop_assert_eq!(requeues, max);
    }

    #[test]
    fn projection_round_trips(x in -0.2f64..0.2, y in -0.2f64..0.2, z in 0.1f64..1.0) {
        let cam = CameraModel::new(900.0, 905.0, 640.0, 360.0).unwrap();
        let p = Point::new(x, y, z);
        let px = cam.project(&p).unwrap();
        let back = back_project(px, z, &cam).unwrap();
        prop_assert!((back - p).norm() < 1e-12);
    }
}

#[test]
fn empty_graph_orders_nothing() {
    let graph = PartGraph::new();
    assert!(topo_order(&graph, &ClassPriority(Vec::new()), &Point::origin()).unwrap().is_empty());
    let set = select_dispatch(&[vec![], vec![]], &arms(), &graph, &[]);
    assert!(set.is_empty());
}
