//! Hardware fault injection.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::stream_rng;
use crate::model::Category;
use crate::scenario::{FaultParams, FaultSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaultKind {
    /// Suction gripper loses the part during a pick.
    VacuumSealLeak,
    /// Tool-head lighting drops out; fine alignment is unavailable.
    IlluminationLoss,
    /// A screw reports free but is still seated.
    IncompleteDisengage,
    /// Guarded lift stopped by a part still holding the target.
    ResistanceStop,
}

impl FaultKind {
    pub const INJECTED: [FaultKind; 3] = [
        FaultKind::VacuumSealLeak,
        FaultKind::IlluminationLoss,
        FaultKind::IncompleteDisengage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::VacuumSealLeak => "vacuum_seal_leak",
            FaultKind::IlluminationLoss => "illumination_loss",
            FaultKind::IncompleteDisengage => "incomplete_disengage",
            FaultKind::ResistanceStop => "resistance_stop",
        }
    }

    fn tag(self) -> u8 {
        match self {
            FaultKind::VacuumSealLeak => 0x10,
            FaultKind::IlluminationLoss => 0x11,
            FaultKind::IncompleteDisengage => 0x12,
            FaultKind::ResistanceStop => 0x13,
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for FaultKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "vacuum_seal_leak" => FaultKind::VacuumSealLeak,
            "illumination_loss" => FaultKind::IlluminationLoss,
            "incomplete_disengage" => FaultKind::IncompleteDisengage,
            "resistance_stop" => FaultKind::ResistanceStop,
            _ => return Err(()),
        })
    }
}

/// Draws fault occurrences. Each opportunity is keyed by the physical part
/// and a per-part counter so the same part sees the same draw regardless of
/// when it is reached.
#[derive(Debug, Clone)]
pub struct FaultInjector {
    spec: FaultSpec,
    enabled: bool,
    seed: u64,
    fired: BTreeSet<FaultKind>,
}

impl FaultInjector {
    pub fn new(spec: FaultSpec, enabled: bool, seed: u64) -> Self {
        FaultInjector {
            spec,
            enabled,
            seed,
            fired: BTreeSet::new(),
        }
    }

    pub fn params(&self, kind: FaultKind) -> Option<&FaultParams> {
        match kind {
            FaultKind::VacuumSealLeak => Some(&self.spec.vacuum_seal_leak),
            FaultKind::IlluminationLoss => Some(&self.spec.illumination_loss),
            FaultKind::IncompleteDisengage => Some(&self.spec.incomplete_disengage),
            FaultKind::ResistanceStop => None,
        }
    }

    pub fn fired(&self) -> &BTreeSet<FaultKind> {
        &self.fired
    }

    pub fn strikes(&mut self, kind: FaultKind, category: &Category, part: u64, opportunity: u64) -> bool {
        if !self.enabled {
            return false;
        }
        let Some(p) = self.params(kind) else { return false };
        if p.probability <= 0.0 || !p.applies_to(category) || (p.once_per_trial && self.fired.contains(&kind)) {
            return false;
        }
        let prob = p.probability;
        let hit = stream_rng(self.seed, kind.tag(), part, opportunity).random_bool(prob);
        if hit {
            self.fired.insert(kind);
        }
        hit
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(p: f64) -> FaultSpec {
        let mut s = FaultSpec::default();
        s.vacuum_seal_leak = FaultParams {
            probability: p,
            categories: vec!["platter".into()],
            ..FaultParams::off()
        };
        s
    }

    #[test]
    fn disabled_or_zero_never_fires() {
        let mut f = FaultInjector::new(spec(1.0), false, 1);
        assert!(!f.strikes(FaultKind::VacuumSealLeak, &"platter".into(), 0, 0));
        let mut f = FaultInjector::new(spec(0.0), true, 1);
        assert!(!f.strikes(FaultKind::VacuumSealLeak, &"platter".into(), 0, 0));
    }

    #[test]
    fn fires_once_and_only_on_listed_categories() {
        let mut f = FaultInjector::new(spec(1.0), true, 1);
        assert!(!f.strikes(FaultKind::VacuumSealLeak, &"lid".into(), 0, 0));
        assert!(f.strikes(FaultKind::VacuumSealLeak, &"platter".into(), 0, 0));
        assert!(!f.strikes(FaultKind::VacuumSealLeak, &"platter".into(), 0, 1));
        assert!(f.fired().contains(&FaultKind::VacuumSealLeak));
    }

    #[test]
    fn rate_matches_probability() {
        let hits = (0..20_000u64)
            .filter(|&seed| FaultInjector::new(spec(0.1), true, seed).strikes(FaultKind::VacuumSealLeak, &"platter".into(), 3, 0))
            .count();
        assert!((hits as f64 / 20_000.0 - 0.1).abs() < 0.01);
    }

    #[test]
    fn names_round_trip() {
        for k in FaultKind::INJECTED.into_iter().chain([FaultKind::ResistanceStop]) {
            assert_eq!(k.as_str().parse::<FaultKind>(), Ok(k));
        }
    }
}
