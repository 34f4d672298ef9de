//! Fixtures shared by the benchmarks.

use teardown_core::scenario::Scenario;
use teardown_core::scheduler::capability_filter;
use teardown_core::sequencer::{instantiate, rank_ready};
use teardown_core::{ActionPrimitive, ArmProfile, PartGraph, Point};

pub struct Fixture {
    pub scenario: Scenario,
    pub graph: PartGraph,
    pub arms: Vec<ArmProfile>,
    /// First action of every ready node, split per arm.
    pub candidates: Vec<Vec<ActionPrimitive>>,
}

/// The full ground-truth graph of a bundled drive with its opening
/// candidates.
pub fn fixture(name: &str) -> Fixture {
    let scenario = Scenario::bundled(name).expect("bundled scenario");
    let graph = scenario.full_graph().expect("acyclic bundled graph");
    let arms = scenario.arm_profiles();
    let ready: Vec<ActionPrimitive> = rank_ready(&graph, &scenario.priority, &Point::origin())
        .into_iter()
        .map(|id| instantiate(graph.node(id).expect("ready node"), &scenario.templates).expect("template")[0].clone())
        .collect();
    let candidates = capability_filter(&ready, &arms).expect("owned capabilities");
    Fixture {
        scenario,
        graph,
        arms,
        candidates,
    }
}
