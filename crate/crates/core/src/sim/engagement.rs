//! Screw engagement: Bernoulli seating per attempt with mode-dependent
//! probability and timing.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::Layer;
use crate::scenario::EngagementSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Approach from the overview pose only.
    Coarse,
    /// Close-range visual alignment before engaging.
    Fine,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Mode::Coarse => "coarse",
            Mode::Fine => "fine",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "coarse" => Ok(Mode::Coarse),
            "fine" => Ok(Mode::Fine),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngagementModel {
    pub mode: Mode,
    pub p_success_coarse: f64,
    pub p_success_fine: f64,
    pub align_time_fine: f64,
    pub engage_time: f64,
    pub unscrew_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engagement {
    Success,
    EngageFail,
}

impl EngagementModel {
    /// Model for `layer`, with that layer's overrides applied.
    pub fn from_spec(spec: &EngagementSpec, mode: Mode, layer: Layer) -> Self {
        let o = spec.layer_overrides.get(&layer);
        EngagementModel {
            mode,
            p_success_coarse: spec.p_success_coarse,
            p_success_fine: spec.p_success_fine,
            align_time_fine: o.and_then(|o| o.align_time_s).unwrap_or(spec.align_time_s),
            engage_time: o.and_then(|o| o.engage_time_s).unwrap_or(spec.engage_time_s),
            unscrew_time: o.and_then(|o| o.unscrew_time_s).unwrap_or(spec.unscrew_time_s),
        }
    }

    pub fn is_valid(&self) -> bool {
        let unit = 0.0..=1.0;
        unit.contains(&self.p_success_coarse)
            && unit.contains(&self.p_success_fine)
            && [self.align_time_fine, self.engage_time, self.unscrew_time]
                .iter()
                .all(|t| *t >= 0.0 && t.is_finite())
    }

    pub fn p_success(&self) -> f64 {
        match self.mode {
            Mode::Coarse => self.p_success_coarse,
            Mode::Fine => self.p_success_fine,
        }
    }

    /// Alignment time spent before each engagement attempt.
    pub fn align_time(&self) -> f64 {
        match self.mode {
            Mode::Coarse => 0.0,
            Mode::Fine => self.align_time_fine,
        }
    }
}

pub fn attempt_engagement<R: Rng + ?Sized>(model: &EngagementModel, rng: &mut R) -> Engagement {
    debug_assert!(model.is_valid());
    if rng.random_bool(model.p_success()) {
        Engagement::Success
    } else {
        Engagement::EngageFail
    }
}
