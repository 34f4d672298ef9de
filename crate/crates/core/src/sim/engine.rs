//! The trial loop: scan, refresh the graph, dispatch ready actions, advance
//! to the next completion, repeat.
//!
//! Time jumps between completions instead of stepping every tick; all
//! durations are whole ticks so the result is the same as a fixed-rate loop.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::calibration::{calibrate_frames, CalibrationError};
use super::engagement::{EngagementModel, Mode};
use super::execute::{execute_action, StepContext, StepOutcome};
use super::faults::{FaultInjector, FaultKind};
use super::metrics::{Metrics, NodeCounts};
use super::stream_rng;
use super::timeline::{Clock, Outcome, Phase, SimEvent, Task, Ticks, Timeline};
use super::world::{PartStatus, World};
use crate::geometry::{distance, mm_point, mm_vector, Point, RigidTransform};
use crate::model::{Category, Layer, PartId};
use crate::partgraph::{CategoryRule, GraphChange, GraphError, NodeState, PartGraph};
use crate::perception::{synthetic_detect, FramePose, PerceptionError, TrackedPart, Tracker, VisiblePart};
use crate::scenario::Scenario;
use crate::scheduler::{
    capability_filter, handle_failure, on_complete, select_dispatch, ArmProfile, ArmState, FailureOutcome,
    RetryPolicy, ScheduleError,
};
use crate::sequencer::{
    instantiate, rank_ready, ActionId, ActionKind, ActionPrimitive, SequenceError, WorkspaceRegion,
    DEFAULT_REGION_RADIUS,
};

const TAG_SCAN: u8 = 1;
const TAG_ENGAGE: u8 = 2;
const TAG_CALIBRATION: u8 = 3;
const MAX_RESISTANCE_STOPS: u32 = 3;
const MAX_BIND_FAILURES: u32 = 50;
const MAX_LOOP_STEPS: usize = 200_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error("simulation made no progress after {0} loop steps")]
    Stalled(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmSetup {
    /// Arms as listed in the scenario.
    Dual,
    /// One arm with every capability, serialised.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub mode: Mode,
    pub arms: ArmSetup,
    pub faults: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: Mode::Fine,
            arms: ArmSetup::Dual,
            faults: true,
        }
    }
}

/// One dispatched job as seen at dispatch time.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchRecord {
    pub arm: usize,
    pub kind: ActionKind,
    pub node: PartId,
    /// Physical part the node was bound to.
    pub part: usize,
    pub category: Category,
    pub layer: Layer,
    pub region: WorkspaceRegion,
    pub start: Ticks,
    pub end: Ticks,
    /// Index of the synchronised partner record (hold–operate).
    pub paired_with: Option<usize>,
    /// Predecessors of the node still in the graph.
    pub graph_predecessors: usize,
    /// Ground-truth parts still on the device that must come off first.
    pub physical_blockers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub node: PartId,
    pub part: usize,
    pub spec_id: u32,
    pub category: Category,
    pub layer: Layer,
    pub t: Ticks,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub timeline: Timeline,
    pub metrics: Metrics,
    pub dispatches: Vec<DispatchRecord>,
    pub extractions: Vec<Extraction>,
}

pub fn run_loop(scenario: &Scenario, config: &SimConfig, seed: u64) -> Result<RunOutput, SimError> {
    Engine::new(scenario, *config, seed)?.run()
}

#[derive(Debug, Clone, PartialEq)]
enum JobResult {
    Success,
    EngageFail(FailureOutcome),
    Fault { kind: FaultKind, abort: bool },
    Resisted { kind: FaultKind, abort: bool },
    Hold,
}

#[derive(Debug, Clone)]
struct Job {
    node: PartId,
    key: usize,
    /// First step; used for interference checks while running.
    action: ActionPrimitive,
    /// Step whose completion ends the job.
    last: ActionPrimitive,
    result: JobResult,
    position: Point,
    loosened: bool,
}

#[derive(Debug, Clone, Copy)]
enum Effect {
    OffDevice(usize),
    JobDone(usize),
    ScanDone,
    FlipDone,
}

struct Engine<'a> {
    sc: &'a Scenario,
    cfg: SimConfig,
    seed: u64,
    clock: Clock,
    rules: Vec<CategoryRule>,
    retry_policy: RetryPolicy,
    world: World,
    graph: PartGraph,
    tracker: Tracker,
    injector: FaultInjector,
    arms: Vec<ArmProfile>,
    jobs: Vec<Option<Job>>,
    queue: BinaryHeap<Reverse<(Ticks, u64)>>,
    effects: BTreeMap<u64, Effect>,
    seq: u64,
    now: Ticks,
    events: Vec<SimEvent>,
    abandoned: BTreeSet<PartId>,
    abandoned_parts: BTreeSet<usize>,
    retry: BTreeMap<PartId, ActionPrimitive>,
    engage_attempts: BTreeMap<usize, u64>,
    lift_attempts: BTreeMap<usize, u64>,
    resistance: BTreeMap<usize, u32>,
    scan_running: bool,
    scan_again: bool,
    scans: u32,
    frame_id: u64,
    idle_rescans: u32,
    bind_failures: u32,
    aborted: Option<FaultKind>,
    counts: NodeCounts,
    engage_failures: usize,
    pose: FramePose,
    world_to_camera: RigidTransform,
    calibration_iterations: u32,
    dispatches: Vec<DispatchRecord>,
    extractions: Vec<Extraction>,
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario, cfg: SimConfig, seed: u64) -> Result<Self, SimError> {
        let mut arms = sc.arm_profiles();
        if cfg.arms == ArmSetup::Single {
            if sc.categories.iter().any(|c| c.requires_hold) {
                return Err(SimError::Scenario("hold–operate categories need two arms".into()));
            }
            arms = vec![ArmProfile::merged("single", &arms)];
        }

        let hand_eye = sc.hand_eye();
        let scan_pose = sc.scan_pose();
        let cal = &sc.calibration;
        let error = RigidTransform::from_translation(mm_vector(cal.initial_offset_mm));
        let marker = mm_point(cal.marker_mm);
        let noise = Normal::new(0.0, cal.noise_mm / 1000.0).map_err(|e| SimError::Scenario(e.to_string()))?;
        let mut rng = stream_rng(seed, TAG_CALIBRATION, 0, 0);
        let calibration = calibrate_frames(
            &marker,
            |correction| {
                let seen = correction.apply(&error.apply(&marker));
                seen + nalgebra::Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            },
            cal.tol_mm / 1000.0,
            cal.max_iters,
        )?;
        let pose = FramePose {
            camera: sc.camera.model(),
            hand_eye,
            tcp_pose: calibration.offset.compose(&error).compose(&scan_pose),
        };

        let retry_policy = match cfg.mode {
            Mode::Coarse => RetryPolicy::single_attempt(),
            Mode::Fine => sc.retry.clone(),
        };
        let n_arms = arms.len();
        Ok(Engine {
            sc,
            cfg,
            seed,
            clock: Clock::new(sc.ticks_per_second()),
            rules: sc.all_rules(),
            retry_policy,
            world: World::new(sc),
            graph: PartGraph::new(),
            tracker: Tracker::new(sc.perception.tracker),
            injector: FaultInjector::new(sc.faults.clone(), cfg.faults, seed),
            arms,
            jobs: vec![None; n_arms],
            queue: BinaryHeap::new(),
            effects: BTreeMap::new(),
            seq: 0,
            now: 0,
            events: Vec::new(),
            abandoned: BTreeSet::new(),
            abandoned_parts: BTreeSet::new(),
            retry: BTreeMap::new(),
            engage_attempts: BTreeMap::new(),
            lift_attempts: BTreeMap::new(),
            resistance: BTreeMap::new(),
            scan_running: false,
            scan_again: false,
            scans: 0,
            frame_id: 0,
            idle_rescans: 0,
            bind_failures: 0,
            aborted: None,
            counts: NodeCounts::default(),
            engage_failures: 0,
            pose,
            world_to_camera: scan_pose.compose(&hand_eye).inverse(),
            calibration_iterations: calibration.iterations,
            dispatches: Vec::new(),
            extractions: Vec::new(),
        })
    }

    fn run(mut self) -> Result<RunOutput, SimError> {
        self.request_scan();
        let mut steps = 0;
        loop {
            steps += 1;
            if steps > MAX_LOOP_STEPS {
                return Err(SimError::Stalled(steps));
            }
            if self.aborted.is_some() {
                break;
            }
            self.dispatch()?;
            if self.queue.is_empty() {
                if self.idle_rescans < self.sc.perception.max_idle_rescans {
                    self.idle_rescans += 1;
                    self.request_scan();
                    continue;
                }
                if self.ready_to_flip() {
                    self.start_flip();
                    continue;
                }
                break;
            }
            let Reverse((t, _)) = *self.queue.peek().expect("non-empty");
            self.now = t;
            while let Some(&Reverse((t2, seq))) = self.queue.peek() {
                if t2 != t || self.aborted.is_some() {
                    break;
                }
                self.queue.pop();
                let effect = self.effects.remove(&seq).expect("effect for queued seq");
                self.apply(effect)?;
            }
        }
        self.finish()
    }

    fn schedule(&mut self, at: Ticks, effect: Effect) {
        self.seq += 1;
        self.effects.insert(self.seq, effect);
        self.queue.push(Reverse((at, self.seq)));
    }

    fn ready_to_flip(&self) -> bool {
        self.graph.is_empty()
            && !self.world.is_flipped()
            && self.world.has_layer(Layer::L3)
            && (self.world.is_revealed(Layer::L2) || !self.world.has_layer(Layer::L2))
    }

    fn start_flip(&mut self) {
        let end = self.now + self.clock.ticks(self.sc.timing.flip_s);
        self.events.push(SimEvent {
            t_start: self.now,
            t_end: end,
            arm: "device".into(),
            task: Task::Flip,
            phase: Phase::Operate,
            target: None,
            layer: Layer::L3,
            outcome: Outcome::Success,
        });
        self.schedule(end, Effect::FlipDone);
    }

    fn request_scan(&mut self) {
        if self.scan_running {
            self.scan_again = true;
            return;
        }
        self.scan_running = true;
        self.scans += 1;
        let secs = self.sc.perception.scan_frames as f64 * self.sc.timing.frame_s;
        let end = self.now + self.clock.ticks(secs);
        self.schedule(end, Effect::ScanDone);
    }

    fn apply(&mut self, effect: Effect) -> Result<(), SimError> {
        match effect {
            Effect::ScanDone => {
                self.perform_scan()?;
                self.scan_running = false;
                if self.scan_again {
                    self.scan_again = false;
                    self.request_scan();
                }
            }
            Effect::FlipDone => {
                self.world.flip();
                self.request_scan();
            }
            Effect::OffDevice(key) => {
                self.world.parts[key].status = PartStatus::Carried;
                let cat = self.world.parts[key].category.clone();
                if let Some(layer) = self.sc.category(&cat).and_then(|c| c.reveals) {
                    self.world.reveal(layer);
                }
                self.request_scan();
            }
            Effect::JobDone(arm) => self.complete(arm)?,
        }
        Ok(())
    }

    // ---- perception ----

    fn perform_scan(&mut self) -> Result<(), SimError> {
        let camera = self.sc.camera.model();
        let mut parts = Vec::new();
        let mut depths = Vec::new();
        for p in self.world.visible() {
            let pc = self.world_to_camera.apply(&p.position);
            if let Some(pixel) = camera.project(&pc) {
                parts.push(VisiblePart {
                    category: p.category.clone(),
                    pixel,
                });
                depths.push(pc.z);
            }
        }
        let flipped = self.world.is_flipped();
        let fp_categories: Vec<Category> = self
            .sc
            .categories
            .iter()
            .filter(|c| self.world.is_revealed(c.layer) && (c.layer == Layer::L3) == flipped)
            .map(|c| c.name.clone())
            .collect();
        let noise = self.sc.noise;
        let depth_noise = Normal::new(0.0, noise.depth_noise_m).map_err(|e| SimError::Scenario(e.to_string()))?;
        for f in 0..self.sc.perception.scan_frames {
            let mut rng = stream_rng(self.seed, TAG_SCAN, self.scans as u64, f as u64);
            let dets = synthetic_detect(&parts, &noise, &fp_categories, self.frame_id, &mut rng);
            let parts_ref = &parts;
            let depths_ref = &depths;
            self.tracker.step(
                self.frame_id,
                &dets,
                |d| {
                    let nearest = parts_ref
                        .iter()
                        .enumerate()
                        .min_by(|a, b| a.1.pixel.distance(&d.centroid).total_cmp(&b.1.pixel.distance(&d.centroid)));
                    match nearest {
                        Some((i, _)) => Ok(depths_ref[i] + depth_noise.sample(&mut rng)),
                        None => Err(PerceptionError::NoDepth {
                            u: d.centroid.u,
                            v: d.centroid.v,
                            window: 1,
                        }),
                    }
                },
                &self.pose,
            );
            self.frame_id += 1;
        }
        self.reidentify();

        let min_hits = self.tracker.config().min_hits;
        let observed: Vec<TrackedPart> = self
            .tracker
            .tracks()
            .iter()
            .filter(|t| t.hits >= min_hits || self.graph.contains(t.id))
            .cloned()
            .collect();
        let sc = self.sc;
        let changes = self.graph.sync_with_observations(&observed, &self.rules, |c| sc.layer_of(c))?;
        for change in changes {
            match change {
                GraphChange::Added(_) => self.counts.inserted += 1,
                GraphChange::Removed(id) => {
                    self.counts.removed += 1;
                    self.retry.remove(&id);
                    self.abandoned.remove(&id);
                }
            }
        }
        Ok(())
    }

    /// Hands the id of a node whose track was lost to a fresh nearby track
    /// of the same category.
    fn reidentify(&mut self) {
        let alive: BTreeSet<PartId> = self.tracker.tracks().iter().map(|t| t.id).collect();
        let lost: Vec<(PartId, Category, Point)> = self
            .graph
            .nodes()
            .filter(|n| !alive.contains(&n.id))
            .map(|n| (n.id, n.category.clone(), n.position_world))
            .collect();
        if lost.is_empty() {
            return;
        }
        let gate = self.sc.perception.reid_gate_mm / 1000.0;
        let mut fresh: Vec<(PartId, Category, Point)> = self
            .tracker
            .tracks()
            .iter()
            .filter(|t| !self.graph.contains(t.id) && !self.graph.is_retired(t.id))
            .map(|t| (t.id, t.category.clone(), t.smoothed_position))
            .collect();
        for (id, cat, pos) in lost {
            let best = fresh
                .iter()
                .enumerate()
                .filter(|(_, f)| f.1 == cat)
                .map(|(i, f)| (i, distance(&f.2, &pos)))
                .filter(|(_, d)| *d <= gate)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((i, _)) = best {
                let (from, _, _) = fresh.remove(i);
                self.tracker.relabel(from, id);
            }
        }
    }

    // ---- dispatch ----

    fn dispatch(&mut self) -> Result<(), SimError> {
        loop {
            if self.aborted.is_some() || !self.arms.iter().any(ArmProfile::is_idle) {
                return Ok(());
            }
            let ready: BTreeSet<PartId> = self
                .graph
                .ready_set()
                .into_iter()
                .filter(|id| !self.abandoned.contains(id))
                .collect();
            if ready.is_empty() {
                return Ok(());
            }
            let mut candidates = vec![Vec::new(); self.arms.len()];
            for i in 0..self.arms.len() {
                if !self.arms[i].is_idle() {
                    continue;
                }
                let order = rank_ready(&self.graph, &self.sc.priority, &self.arms[i].last_target);
                let actions = order
                    .into_iter()
                    .filter(|id| ready.contains(id))
                    .map(|id| self.next_action(id))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut lists = capability_filter(&actions, &self.arms)?;
                candidates[i] = std::mem::take(&mut lists[i]);
            }
            let in_flight: Vec<ActionPrimitive> = self.jobs.iter().flatten().map(|j| j.action.clone()).collect();
            let set = select_dispatch(&candidates, &self.arms, &self.graph, &in_flight);
            if set.is_empty() {
                return Ok(());
            }
            let mut all_started = true;
            let mut i = 0;
            while i < set.assignments.len() {
                let a = &set.assignments[i];
                let holder = a.synchronized_with.map(|j| (set.assignments[j].arm, set.assignments[j].action.clone()));
                all_started &= self.start_job(a.arm, &a.action, holder)?;
                i += if a.synchronized_with.is_some() { 2 } else { 1 };
            }
            if all_started {
                return Ok(());
            }
        }
    }

    fn next_action(&self, id: PartId) -> Result<ActionPrimitive, SimError> {
        let mut action = match self.retry.get(&id) {
            Some(a) => a.clone(),
            None => {
                let node = self.graph.node(id).expect("ready node exists");
                instantiate(node, &self.sc.templates)?.swap_remove(0)
            }
        };
        action.hold_partner = self.hold_for(&action).map(Box::new);
        Ok(action)
    }

    fn hold_for(&self, action: &ActionPrimitive) -> Option<ActionPrimitive> {
        if action.action_kind != ActionKind::Unscrew {
            return None;
        }
        let host = self.graph.successors(action.target_node).find_map(|s| {
            let n = self.graph.node(s)?;
            let needs = self.sc.category(&n.category).is_some_and(|c| c.requires_hold);
            (needs && n.state == NodeState::Present).then_some(n)
        })?;
        let radius = self
            .sc
            .templates
            .iter()
            .find(|t| t.applicable_category == host.category)
            .map_or(DEFAULT_REGION_RADIUS, |t| t.region_radius);
        Some(ActionPrimitive {
            id: ActionId::new(host.id, 0xff),
            action_kind: ActionKind::Hold,
            target_node: host.id,
            target_position: host.position_world,
            capability_required: "hold".into(),
            workspace_region: WorkspaceRegion {
                center: host.position_world,
                radius,
            },
            retries_used: 0,
            approach_offset: 0.0,
            nominal_speed: 0.0,
            tool_params: Default::default(),
            hold_partner: None,
        })
    }

    /// Binds the node to a physical part and lays out the whole action
    /// chain on the arm. Returns false when the node turned out to be stale.
    fn start_job(
        &mut self,
        arm_idx: usize,
        action: &ActionPrimitive,
        holder: Option<(usize, ActionPrimitive)>,
    ) -> Result<bool, SimError> {
        let id = action.target_node;
        let node = self.graph.node(id).cloned().expect("dispatched node exists");
        let gate = self.sc.perception.bind_gate_mm / 1000.0;
        let busy_parts: BTreeSet<usize> = self.jobs.iter().flatten().map(|j| j.key).collect();
        let key = match self.world.bind(&node.category, &node.position_world, gate) {
            Some(k) if !busy_parts.contains(&k) => k,
            _ => {
                // nothing physical there: a spurious or duplicate node
                self.bind_failures += 1;
                if self.bind_failures > MAX_BIND_FAILURES {
                    self.abandoned.insert(id);
                } else {
                    self.graph.remove_node(id)?;
                    self.counts.removed += 1;
                    self.tracker.forget(id);
                    self.retry.remove(&id);
                }
                self.request_scan();
                return Ok(false);
            }
        };
        if self.abandoned_parts.contains(&key) {
            self.abandoned.insert(id);
            return Ok(false);
        }

        self.graph.set_state(id, NodeState::InProgress)?;
        let layer = node.layer;
        let ctx = StepContext {
            clock: self.clock,
            timing: &self.sc.timing,
            engagement: EngagementModel::from_spec(&self.sc.engagement, self.cfg.mode, layer),
            layer,
            illumination_outage_s: self.sc.faults.illumination_loss.outage_s,
        };
        let mut chain = instantiate(&node, &self.sc.templates)?;
        chain[0] = ActionPrimitive {
            hold_partner: None,
            ..action.clone()
        };
        let graph_predecessors = self.graph.predecessors(id).count();
        let physical_blockers = self.world.blockers(key, &self.rules).len();
        let category = node.category.clone();

        let mut start = self.now;
        let mut hold_setup = None;
        if let Some((h_idx, hold)) = &holder {
            let mut rng = stream_rng(self.seed, TAG_ENGAGE, u64::MAX, 0);
            let x = execute_action(hold, &self.arms[*h_idx], self.now, &ctx, None, &mut rng);
            start = start.max(x.end);
            hold_setup = Some((*h_idx, hold.clone(), x));
        }

        let mut arm = self.arms[arm_idx].clone();
        let mut events = Vec::new();
        let mut t = start;
        let mut result = JobResult::Success;
        let mut off_device_at = None;
        let mut loosened = false;
        let mut last = chain[0].clone();
        for (step_idx, step) in chain.iter().enumerate() {
            last = step.clone();
            let mut attempt = 0;
            let fault = match step.action_kind {
                ActionKind::Unscrew => {
                    let counter = self.engage_attempts.entry(key).or_insert(0);
                    attempt = *counter;
                    *counter += 1;
                    (self.cfg.mode == Mode::Fine
                        && self.injector.strikes(FaultKind::IlluminationLoss, &category, key as u64, attempt))
                    .then_some(FaultKind::IlluminationLoss)
                }
                ActionKind::Lift | ActionKind::Remove => {
                    let blockers = self.world.blockers(key, &self.rules);
                    if !blockers.is_empty() {
                        let disengaged = blockers.iter().any(|&b| self.world.parts[b].loosened);
                        Some(if disengaged {
                            FaultKind::IncompleteDisengage
                        } else {
                            FaultKind::ResistanceStop
                        })
                    } else if step.action_kind == ActionKind::Lift {
                        let counter = self.lift_attempts.entry(key).or_insert(0);
                        let n = *counter;
                        *counter += 1;
                        self.injector
                            .strikes(FaultKind::VacuumSealLeak, &category, key as u64, n)
                            .then_some(FaultKind::VacuumSealLeak)
                    } else {
                        None
                    }
                }
                _ => None,
            };
            let mut rng = stream_rng(self.seed, TAG_ENGAGE, key as u64, attempt);
            let x = execute_action(step, &arm, t, &ctx, fault, &mut rng);
            events.extend(x.events);
            t = x.end;
            arm.current_position = x.position;
            match x.outcome {
                StepOutcome::Done => {
                    if matches!(step.action_kind, ActionKind::Lift | ActionKind::Remove) && step_idx + 1 < chain.len() {
                        off_device_at = Some(t);
                    }
                    if step.action_kind == ActionKind::Unscrew
                        && self
                            .injector
                            .strikes(FaultKind::IncompleteDisengage, &category, key as u64, 0)
                    {
                        loosened = true;
                    }
                }
                StepOutcome::EngageFail => {
                    self.engage_failures += 1;
                    let outcome = handle_failure(step, &self.retry_policy);
                    if outcome == FailureOutcome::Abandoned {
                        if let Some(e) = events.last_mut() {
                            e.outcome = Outcome::Abandoned;
                        }
                    }
                    result = JobResult::EngageFail(outcome);
                    break;
                }
                StepOutcome::Fault(kind) => {
                    let abort = self.injector.params(kind).is_some_and(|p| p.safe_abort);
                    result = match kind {
                        FaultKind::ResistanceStop | FaultKind::IncompleteDisengage => JobResult::Resisted { kind, abort },
                        _ => JobResult::Fault { kind, abort },
                    };
                    break;
                }
            }
        }
        let end = t;
        self.events.extend(events);

        let record_idx = self.dispatches.len();
        self.dispatches.push(DispatchRecord {
            arm: arm_idx,
            kind: chain[0].action_kind,
            node: id,
            part: key,
            category: category.clone(),
            layer,
            region: chain[0].workspace_region,
            start: self.now,
            end,
            paired_with: hold_setup.as_ref().map(|_| record_idx + 1),
            graph_predecessors,
            physical_blockers,
        });

        if let Some((h_idx, hold, x)) = hold_setup {
            let arrival = x.end;
            self.events.extend(x.events);
            self.events.push(SimEvent {
                t_start: arrival,
                t_end: end.max(arrival),
                arm: self.arms[h_idx].name.clone(),
                task: Task::Action(ActionKind::Hold),
                phase: Phase::Hold,
                target: Some(hold.target_node),
                layer,
                outcome: Outcome::Success,
            });
            let host_cat = self.graph.node(hold.target_node).map(|n| n.category.clone()).unwrap_or_else(|| category.clone());
            self.dispatches.push(DispatchRecord {
                arm: h_idx,
                kind: ActionKind::Hold,
                node: hold.target_node,
                part: key,
                category: host_cat,
                layer,
                region: hold.workspace_region,
                start: self.now,
                end: end.max(arrival),
                paired_with: Some(record_idx),
                graph_predecessors: 0,
                physical_blockers: 0,
            });
            self.begin_arm(h_idx)?;
            self.jobs[h_idx] = Some(Job {
                node: hold.target_node,
                key,
                action: hold.clone(),
                last: hold.clone(),
                result: JobResult::Hold,
                position: hold.target_position,
                loosened: false,
            });
            self.schedule(end.max(arrival), Effect::JobDone(h_idx));
        }

        if let Some(at) = off_device_at {
            self.schedule(at, Effect::OffDevice(key));
        }
        self.begin_arm(arm_idx)?;
        self.jobs[arm_idx] = Some(Job {
            node: id,
            key,
            action: chain[0].clone(),
            last,
            result,
            position: arm.current_position,
            loosened,
        });
        self.schedule(end, Effect::JobDone(arm_idx));
        Ok(true)
    }

    fn begin_arm(&mut self, idx: usize) -> Result<(), SimError> {
        self.arms[idx].transition(ArmState::Moving)?;
        self.arms[idx].transition(ArmState::Acting)?;
        Ok(())
    }

    // ---- completion ----

    fn complete(&mut self, arm_idx: usize) -> Result<(), SimError> {
        let job = self.jobs[arm_idx].take().expect("completion for a running job");
        let arm = &mut self.arms[arm_idx];
        arm.transition(ArmState::Idle)?;
        arm.current_position = job.position;
        arm.last_target = job.action.target_position;
        let id = job.node;
        match job.result {
            JobResult::Hold => {}
            JobResult::Success => {
                let part = &mut self.world.parts[job.key];
                if job.loosened {
                    part.loosened = true;
                } else {
                    part.status = PartStatus::Extracted;
                    part.loosened = false;
                    self.extractions.push(Extraction {
                        node: id,
                        part: job.key,
                        spec_id: part.spec_id,
                        category: part.category.clone(),
                        layer: part.layer,
                        t: self.now,
                    });
                }
                on_complete(&mut self.graph, &job.last)?;
                self.counts.removed += 1;
                self.tracker.forget(id);
                self.retry.remove(&id);
                self.idle_rescans = 0;
            }
            JobResult::EngageFail(outcome) => {
                self.graph.set_state(id, NodeState::Present)?;
                match outcome {
                    FailureOutcome::Requeued(next) => {
                        self.retry.insert(id, next);
                    }
                    FailureOutcome::Abandoned => {
                        self.retry.remove(&id);
                        self.abandoned.insert(id);
                        self.abandoned_parts.insert(job.key);
                    }
                }
            }
            JobResult::Fault { kind, abort } => {
                self.graph.set_state(id, NodeState::Present)?;
                if abort {
                    self.abandoned.insert(id);
                    self.abandoned_parts.insert(job.key);
                    self.aborted = Some(kind);
                }
            }
            JobResult::Resisted { kind, abort } => {
                self.graph.set_state(id, NodeState::Present)?;
                let n = self.resistance.entry(job.key).or_insert(0);
                *n += 1;
                if abort {
                    self.aborted = Some(kind);
                }
                if abort || *n >= MAX_RESISTANCE_STOPS {
                    self.abandoned.insert(id);
                    self.abandoned_parts.insert(job.key);
                }
                self.request_scan();
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<RunOutput, SimError> {
        if self.aborted.is_some() {
            let stop = self.now;
            self.events.retain(|e| e.t_start < stop || (e.t_start == stop && e.t_end == stop));
            for e in &mut self.events {
                if e.t_end > stop {
                    e.t_end = stop;
                    e.outcome = Outcome::Abandoned;
                }
            }
        }
        let timeline = Timeline::new(self.clock, std::mem::take(&mut self.events));
        let mut metrics = Metrics::collect(&timeline, &self.world);
        metrics.completed = self.aborted.is_none() && self.world.all_extracted();
        let abandoned_in_graph = self.graph.nodes().filter(|n| self.abandoned.contains(&n.id)).count();
        self.counts.abandoned = abandoned_in_graph;
        self.counts.present_at_end = self.graph.len() - abandoned_in_graph;
        metrics.nodes = self.counts.clone();
        metrics.engage_failures = self.engage_failures;
        metrics.faults = self.injector.fired().iter().copied().collect();
        metrics.aborted_by = self.aborted;
        metrics.scans = self.scans;
        metrics.calibration_iterations = self.calibration_iterations;

        let stuck = self.counts.present_at_end > 0;
        if stuck && self.aborted.is_none() && self.abandoned.is_empty() && self.injector.fired().is_empty() {
            let names: Vec<String> = self.graph.nodes().map(|n| format!("{}:{}", n.id, n.category)).collect();
            return Err(SimError::Scenario(format!(
                "deadlock: no dispatchable action for {}",
                names.join(", ")
            )));
        }
        Ok(RunOutput {
            timeline,
            metrics,
            dispatches: self.dispatches,
            extractions: self.extractions,
        })
    }
}
