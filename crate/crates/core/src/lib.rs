//! Perception-driven disassembly planning for a dual-arm cell: part
//! detection and tracking, the precedence graph, sequencing, dual-arm
//! dispatch and a deterministic discrete-event simulator.

pub mod batch;
pub mod geometry;
pub mod model;
pub mod partgraph;
pub mod perception;
pub mod scenario;
pub mod scheduler;
pub mod sequencer;
pub mod sim;

pub use geometry::{Point, RigidTransform};
pub use model::{Capability, Category, Layer, PartId};
pub use partgraph::{CategoryRule, EdgeKind, PartGraph, PartNode};
pub use batch::{run_batch, AggregateReport, RunConfig};
pub use scenario::{load_scenario, resolve_scenario, Scenario, ScenarioError};
pub use scheduler::{ArmProfile, DispatchSet, RetryPolicy};
pub use sequencer::{ActionKind, ActionPrimitive, ActionTemplate, ClassPriority};
pub use sim::{run_loop, ArmSetup, Metrics, Mode, RunOutput, SimConfig, SimError, Timeline};
