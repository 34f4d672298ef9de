//! Scenario files: device layout, arms, rules, templates and the timing
//! and fault constants for one device family.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{mm_point, Point, RigidTransform, TransformSpec};
use crate::model::{Capability, Category, Layer, PartId};
use crate::partgraph::{CategoryRule, GraphError, PartGraph, PartNode};
use crate::perception::{CameraModel, NoiseModel, TrackerConfig};
use crate::scheduler::{ArmProfile, RetryPolicy};
use crate::sequencer::{ActionTemplate, ClassPriority};

pub const BUNDLED: [&str; 3] = ["samsung", "seagate", "western_digital"];

const SAMSUNG: &str = include_str!("../scenarios/samsung.json");
const SEAGATE: &str = include_str!("../scenarios/seagate.json");
const WESTERN_DIGITAL: &str = include_str!("../scenarios/western_digital.json");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("unknown bundled scenario {0:?}")]
    UnknownBundled(String),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub hand_eye: TransformSpec,
    /// Tool pose at which the overview scans are taken.
    pub scan_pose: TransformSpec,
    /// Image scale at the fine-alignment standoff.
    pub mm_per_px: f64,
}

impl CameraSpec {
    pub fn model(&self) -> CameraModel {
        CameraModel {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionSpec {
    pub tracker: TrackerConfig,
    pub scan_frames: u32,
    /// Radius within which a fresh track is matched to a node whose track
    /// was lost.
    pub reid_gate_mm: f64,
    /// Radius within which a node is matched to a physical part.
    pub bind_gate_mm: f64,
    /// Rescans attempted when nothing is dispatchable before giving up.
    pub max_idle_rescans: u32,
}

impl Default for PerceptionSpec {
    fn default() -> Self {
        PerceptionSpec {
            tracker: TrackerConfig::default(),
            scan_frames: 10,
            reid_gate_mm: 10.0,
            bind_gate_mm: 15.0,
            max_idle_rescans: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub name: String,
    pub capabilities: Vec<Capability>,
    pub home_mm: [f64; 3],
    /// m/s
    pub speed: f64,
    pub drop_pose_mm: [f64; 3],
}

impl ArmSpec {
    pub fn profile(&self) -> ArmProfile {
        let caps: Vec<&str> = self.capabilities.iter().map(|c| c.0.as_str()).collect();
        ArmProfile::new(&self.name, &caps, mm_point(self.home_mm), self.speed, mm_point(self.drop_pose_mm))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: Category,
    pub layer: Layer,
    /// Counted in the clearance rate.
    #[serde(default)]
    pub fastener: bool,
    /// Operating on a fastener of this part needs the other arm to hold it.
    #[serde(default)]
    pub requires_hold: bool,
    /// Taking this part off the device exposes the given layer.
    #[serde(default)]
    pub reveals: Option<Layer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub id: u32,
    pub category: Category,
    pub layer: Layer,
    /// Position before any flip, in the world frame.
    pub position_mm: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngagementOverride {
    pub align_time_s: Option<f64>,
    pub engage_time_s: Option<f64>,
    pub unscrew_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementSpec {
    pub p_success_coarse: f64,
    pub p_success_fine: f64,
    pub align_time_s: f64,
    pub engage_time_s: f64,
    pub unscrew_time_s: f64,
    #[serde(default)]
    pub layer_overrides: BTreeMap<Layer, EngagementOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultParams {
    /// Chance per opportunity.
    pub probability: f64,
    /// Categories exposed to the fault; empty means all eligible ones.
    #[serde(default)]
    pub categories: Vec<Category>,
    /// Stop the trial when the fault fires.
    #[serde(default)]
    pub safe_abort: bool,
    /// Unavailability window for transient faults.
    #[serde(default)]
    pub outage_s: f64,
    #[serde(default = "yes")]
    pub once_per_trial: bool,
}

fn yes() -> bool {
    true
}

impl FaultParams {
    pub fn off() -> Self {
        FaultParams {
            probability: 0.0,
            categories: Vec::new(),
            safe_abort: false,
            outage_s: 0.0,
            once_per_trial: true,
        }
    }

    pub fn applies_to(&self, category: &Category) -> bool {
        self.categories.is_empty() || self.categories.contains(category)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub vacuum_seal_leak: FaultParams,
    pub illumination_loss: FaultParams,
    pub incomplete_disengage: FaultParams,
}

impl Default for FaultSpec {
    fn default() -> Self {
        FaultSpec {
            vacuum_seal_leak: FaultParams::off(),
            illumination_loss: FaultParams::off(),
            incomplete_disengage: FaultParams::off(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSpec {
    pub tick_s: f64,
    pub frame_s: f64,
    pub flip_s: f64,
    pub lift_s: f64,
    pub remove_s: f64,
    /// Release of a large part at the manipulation bin.
    pub drop_s: f64,
    /// Release of a fastener at the tool bin.
    pub release_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub marker_mm: [f64; 3],
    /// Error of the nominal hand–eye transform, world frame.
    pub initial_offset_mm: [f64; 3],
    pub noise_mm: f64,
    pub tol_mm: f64,
    pub max_iters: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub notes: String,
    pub camera: CameraSpec,
    #[serde(default)]
    pub perception: PerceptionSpec,
    pub noise: NoiseModel,
    pub arms: Vec<ArmSpec>,
    pub categories: Vec<CategorySpec>,
    pub rules: BTreeMap<Layer, Vec<CategoryRule>>,
    pub priority: ClassPriority,
    pub templates: Vec<ActionTemplate>,
    pub parts: Vec<PartSpec>,
    pub engagement: EngagementSpec,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub faults: FaultSpec,
    pub timing: TimingSpec,
    pub calibration: CalibrationSpec,
    pub holder_plane_z_mm: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn bundled(name: &str) -> Result<Scenario, ScenarioError> {
        let text = match name {
            "samsung" => SAMSUNG,
            "seagate" => SEAGATE,
            "western_digital" => WESTERN_DIGITAL,
            other => return Err(ScenarioError::UnknownBundled(other.to_owned())),
        };
        Scenario::from_json(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn all_rules(&self) -> Vec<CategoryRule> {
        self.rules.values().flatten().cloned().collect()
    }

    pub fn category(&self, name: &Category) -> Option<&CategorySpec> {
        self.categories.iter().find(|c| &c.name == name)
    }

    pub fn layer_of(&self, name: &Category) -> Layer {
        self.category(name).map(|c| c.layer).unwrap_or(Layer::L1)
    }

    pub fn is_fastener(&self, name: &Category) -> bool {
        self.category(name).is_some_and(|c| c.fastener)
    }

    pub fn arm_profiles(&self) -> Vec<ArmProfile> {
        self.arms.iter().map(ArmSpec::profile).collect()
    }

    pub fn ticks_per_second(&self) -> u32 {
        (1.0 / self.timing.tick_s).round() as u32
    }

    /// Graph over every part of every layer, as if all were visible.
    pub fn full_graph(&self) -> Result<PartGraph, GraphError> {
        let nodes = self
            .parts
            .iter()
            .map(|p| PartNode::new(PartId(p.id), p.category.clone(), mm_point(p.position_mm), p.layer))
            .collect();
        PartGraph::build(nodes, &self.all_rules())
    }

    /// Structural and numeric checks; errors name the offending field.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.camera
            .model()
            .validate()
            .map_err(|e| invalid("camera", e.to_string()))?;
        for (path, t) in [("camera.hand_eye", &self.camera.hand_eye), ("camera.scan_pose", &self.camera.scan_pose)] {
            t.to_transform().map_err(|e| invalid(path, e.to_string()))?;
        }
        positive("camera.mm_per_px", self.camera.mm_per_px)?;
        self.noise.validate().map_err(|e| invalid("noise", e.to_string()))?;
        let tc = &self.perception.tracker;
        if !(tc.ema_alpha > 0.0 && tc.ema_alpha <= 1.0) {
            return Err(invalid("perception.tracker.ema_alpha", "must lie in (0, 1]"));
        }
        if tc.depth_window.is_multiple_of(2) {
            return Err(invalid("perception.tracker.depth_window", "must be odd"));
        }
        if self.perception.scan_frames == 0 {
            return Err(invalid("perception.scan_frames", "must be at least 1"));
        }

        if self.arms.is_empty() {
            return Err(invalid("arms", "at least one arm is required"));
        }
        let mut arm_names = BTreeSet::new();
        for (i, arm) in self.arms.iter().enumerate() {
            if !arm_names.insert(arm.name.as_str()) {
                return Err(invalid(format!("arms[{i}].name"), format!("duplicate arm {}", arm.name)));
            }
            positive(&format!("arms[{i}].speed"), arm.speed)?;
        }
        let owned: BTreeSet<&Capability> = self.arms.iter().flat_map(|a| a.capabilities.iter()).collect();

        let mut cats = BTreeSet::new();
        for (i, c) in self.categories.iter().enumerate() {
            if !cats.insert(&c.name) {
                return Err(invalid(format!("categories[{i}].name"), format!("duplicate category {}", c.name)));
            }
            if c.requires_hold && !owned.contains(&Capability::from("hold")) {
                return Err(invalid(format!("categories[{i}].requires_hold"), "no arm offers the hold capability"));
            }
            match self.templates.iter().rfind(|t| t.applicable_category == c.name) {
                None => {
                    return Err(invalid(format!("categories[{i}]"), format!("no template for category {}", c.name)));
                }
                Some(t) if !t.action_kind.is_terminal() => {
                    return Err(invalid(
                        format!("categories[{i}]"),
                        format!("action chain for {} must end in unscrew, remove or drop", c.name),
                    ));
                }
                Some(_) => {}
            }
        }
        for (i, t) in self.templates.iter().enumerate() {
            if !cats.contains(&t.applicable_category) {
                return Err(invalid(
                    format!("templates[{i}].category"),
                    format!("unknown category {}", t.applicable_category),
                ));
            }
            if !owned.contains(&t.capability_required) {
                return Err(invalid(
                    format!("templates[{i}].capability"),
                    format!("no arm offers capability {}", t.capability_required),
                ));
            }
            if !(t.region_radius >= 0.0 && t.region_radius.is_finite()) {
                return Err(invalid(format!("templates[{i}].region_radius"), "must be >= 0"));
            }
            if t.approach_offset > 0.0 {
                positive(&format!("templates[{i}].nominal_speed"), t.nominal_speed)?;
            }
        }
        for (layer, rules) in &self.rules {
            for (i, r) in rules.iter().enumerate() {
                for c in [&r.from_category, &r.to_category] {
                    if !cats.contains(c) {
                        return Err(invalid(format!("rules.{layer}[{i}]"), format!("unknown category {c}")));
                    }
                }
            }
        }
        self.priority
            .validate(self.categories.iter().map(|c| &c.name))
            .map_err(|e| invalid("priority", e.to_string()))?;

        let mut ids = BTreeSet::new();
        for (i, p) in self.parts.iter().enumerate() {
            if !ids.insert(p.id) {
                return Err(invalid(format!("parts[{i}].id"), format!("duplicate part id {}", p.id)));
            }
            let Some(cat) = self.category(&p.category) else {
                return Err(invalid(format!("parts[{i}].category"), format!("unknown category {}", p.category)));
            };
            if cat.layer != p.layer {
                return Err(invalid(
                    format!("parts[{i}].layer"),
                    format!("category {} belongs to {}", p.category, cat.layer),
                ));
            }
        }
        let hidden_l2 = self.parts.iter().any(|p| p.layer == Layer::L2);
        if hidden_l2 && !self.categories.iter().any(|c| c.reveals == Some(Layer::L2)) {
            return Err(invalid("categories", "L2 parts exist but no category reveals L2"));
        }
        match self.full_graph() {
            Ok(_) => {}
            Err(GraphError::RuleCycle(cycle)) => {
                let names: Vec<String> = cycle
                    .iter()
                    .filter_map(|id| self.parts.iter().find(|p| p.id == id.0))
                    .map(|p| p.category.to_string())
                    .collect();
                return Err(invalid("rules", format!("rules form a cycle: {}", names.join(" -> "))));
            }
            Err(e) => return Err(invalid("parts", e.to_string())),
        }

        let e = &self.engagement;
        probability("engagement.p_success_coarse", e.p_success_coarse)?;
        probability("engagement.p_success_fine", e.p_success_fine)?;
        non_negative("engagement.align_time_s", e.align_time_s)?;
        non_negative("engagement.engage_time_s", e.engage_time_s)?;
        non_negative("engagement.unscrew_time_s", e.unscrew_time_s)?;
        for (layer, o) in &e.layer_overrides {
            for (name, v) in [("align_time_s", o.align_time_s), ("engage_time_s", o.engage_time_s), ("unscrew_time_s", o.unscrew_time_s)] {
                if let Some(v) = v {
                    non_negative(&format!("engagement.layer_overrides.{layer}.{name}"), v)?;
                }
            }
        }
        if self.retry.pose_offset_mm < 0.0 {
            return Err(invalid("retry.pose_offset_mm", "must be >= 0"));
        }
        for (name, f) in [
            ("vacuum_seal_leak", &self.faults.vacuum_seal_leak),
            ("illumination_loss", &self.faults.illumination_loss),
            ("incomplete_disengage", &self.faults.incomplete_disengage),
        ] {
            probability(&format!("faults.{name}.probability"), f.probability)?;
            non_negative(&format!("faults.{name}.outage_s"), f.outage_s)?;
        }

        let t = &self.timing;
        positive("timing.tick_s", t.tick_s)?;
        let tps = 1.0 / t.tick_s;
        if (tps - tps.round()).abs() > 1e-9 {
            return Err(invalid("timing.tick_s", "must divide one second evenly"));
        }
        for (name, v) in [
            ("frame_s", t.frame_s),
            ("flip_s", t.flip_s),
            ("lift_s", t.lift_s),
            ("remove_s", t.remove_s),
            ("drop_s", t.drop_s),
            ("release_s", t.release_s),
        ] {
            non_negative(&format!("timing.{name}"), v)?;
        }
        positive("calibration.tol_mm", self.calibration.tol_mm)?;
        non_negative("calibration.noise_mm", self.calibration.noise_mm)?;
        if self.calibration.max_iters == 0 {
            return Err(invalid("calibration.max_iters", "must be at least 1"));
        }
        Ok(())
    }

    pub fn hand_eye(&self) -> RigidTransform {
        self.camera.hand_eye.to_transform().expect("validated")
    }

    pub fn scan_pose(&self) -> RigidTransform {
        self.camera.scan_pose.to_transform().expect("validated")
    }

    pub fn holder_plane_z(&self) -> f64 {
        self.holder_plane_z_mm / 1000.0
    }

    pub fn part_position(&self, part: &PartSpec) -> Point {
        mm_point(part.position_mm)
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text)
}

fn positive(path: &str, v: f64) -> Result<(), ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be > 0, got {v}")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<(), ScenarioError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be >= 0, got {v}")))
    }
}

fn probability(path: &str, v: f64) -> Result<(), ScenarioError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(path, format!("must lie in [0, 1], got {v}")))
    }
}

/// Loads `arg` as a file when it exists, otherwise as a bundled scenario
/// name.
pub fn resolve_scenario(arg: &str) -> Result<Scenario, ScenarioError> {
    let path = Path::new(arg);
    if path.exists() || !BUNDLED.contains(&arg) {
        load_scenario(path)
    } else {
        Scenario::bundled(arg)
    }
}
