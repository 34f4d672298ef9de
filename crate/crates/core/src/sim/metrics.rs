//! Per-trial summary numbers.

use crate::model::Layer;

use super::faults::FaultKind;
use super::timeline::Timeline;
use super::world::World;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeCounts {
    pub inserted: usize,
    pub removed: usize,
    pub abandoned: usize,
    pub present_at_end: usize,
}

impl NodeCounts {
    /// Every node ever inserted is accounted for exactly once.
    pub fn conserved(&self) -> bool {
        self.removed + self.abandoned + self.present_at_end == self.inserted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub layer_times_s: [f64; 3],
    /// Fraction of each layer's fasteners taken out.
    pub clearance_rate: [f64; 3],
    pub completed: bool,
    pub makespan_s: f64,
    pub parts_extracted: usize,
    pub nodes: NodeCounts,
    pub engage_failures: usize,
    pub faults: Vec<FaultKind>,
    pub aborted_by: Option<FaultKind>,
    pub scans: u32,
    pub calibration_iterations: u32,
}

impl Metrics {
    pub fn layer_time(&self, layer: Layer) -> f64 {
        self.layer_times_s[layer.index()]
    }

    pub fn clearance(&self, layer: Layer) -> f64 {
        self.clearance_rate[layer.index()]
    }

    pub fn total_time_s(&self) -> f64 {
        self.layer_times_s.iter().sum()
    }

    pub(crate) fn collect(timeline: &Timeline, world: &World) -> Metrics {
        let clock = timeline.clock;
        Metrics {
            layer_times_s: Layer::ALL.map(|l| clock.seconds(timeline.layer_ticks(l))),
            clearance_rate: Layer::ALL.map(|l| world.clearance(l)),
            completed: false,
            makespan_s: clock.seconds(timeline.total),
            parts_extracted: world
                .parts
                .iter()
                .filter(|p| p.status == super::world::PartStatus::Extracted)
                .count(),
            nodes: NodeCounts::default(),
            engage_failures: 0,
            faults: Vec::new(),
            aborted_by: None,
            scans: 0,
            calibration_iterations: 0,
        }
    }
}
