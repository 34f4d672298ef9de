//! Ground truth: where every physical part is and what state it is in.

use crate::geometry::{distance, Point};
use crate::model::{Category, Layer};
use crate::partgraph::{CategoryRule, RuleScope};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartStatus {
    OnDevice,
    /// Held by a gripper, off the device.
    Carried,
    Extracted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldPart {
    /// Index into the world's part list.
    pub key: usize,
    /// Id from the scenario file.
    pub spec_id: u32,
    pub category: Category,
    pub layer: Layer,
    pub fastener: bool,
    pub position: Point,
    pub status: PartStatus,
    /// Reported unscrewed but still seated.
    pub loosened: bool,
}

#[derive(Debug, Clone)]
pub struct World {
    pub parts: Vec<WorldPart>,
    revealed: [bool; 3],
    flipped: bool,
    holder_z: f64,
}

impl World {
    pub fn new(scenario: &Scenario) -> Self {
        let parts = scenario
            .parts
            .iter()
            .enumerate()
            .map(|(key, p)| WorldPart {
                key,
                spec_id: p.id,
                category: p.category.clone(),
                layer: p.layer,
                fastener: scenario.is_fastener(&p.category),
                position: scenario.part_position(p),
                status: PartStatus::OnDevice,
                loosened: false,
            })
            .collect();
        World {
            parts,
            revealed: [true, false, false],
            flipped: false,
            holder_z: scenario.holder_plane_z(),
        }
    }

    pub fn is_revealed(&self, layer: Layer) -> bool {
        self.revealed[layer.index()]
    }

    pub fn reveal(&mut self, layer: Layer) {
        self.revealed[layer.index()] = true;
    }

    pub fn is_flipped(&self) -> bool {
        self.flipped
    }

    pub fn has_layer(&self, layer: Layer) -> bool {
        self.parts.iter().any(|p| p.layer == layer)
    }

    /// Turns the device over: z is mirrored about the holder plane and the
    /// bottom layer comes into view.
    pub fn flip(&mut self) {
        self.flipped = true;
        self.reveal(Layer::L3);
        for p in &mut self.parts {
            if p.status == PartStatus::OnDevice {
                p.position.z = 2.0 * self.holder_z - p.position.z;
            }
        }
    }

    /// L3 sits under the device until the flip; after it only L3 faces up.
    pub fn is_visible(&self, part: &WorldPart) -> bool {
        part.status == PartStatus::OnDevice
            && self.is_revealed(part.layer)
            && (part.layer == Layer::L3) == self.flipped
    }

    pub fn visible(&self) -> impl Iterator<Item = &WorldPart> {
        self.parts.iter().filter(move |p| self.is_visible(p))
    }

    /// Nearest visible part of `category` within `gate` meters.
    pub fn bind(&self, category: &Category, position: &Point, gate: f64) -> Option<usize> {
        self.visible()
            .filter(|p| &p.category == category)
            .map(|p| (distance(&p.position, position), p.key))
            .filter(|(d, _)| *d <= gate)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, k)| k)
    }

    /// Parts still on the device that must come off before `key` can.
    pub fn blockers(&self, key: usize, rules: &[CategoryRule]) -> Vec<usize> {
        let target = &self.parts[key];
        self.parts
            .iter()
            .filter(|p| p.key != key && p.status == PartStatus::OnDevice)
            .filter(|p| {
                rules.iter().any(|r| {
                    r.from_category == p.category
                        && r.to_category == target.category
                        && (r.scope == RuleScope::CrossLayer || p.layer == target.layer)
                })
            })
            .map(|p| p.key)
            .collect()
    }

    pub fn all_extracted(&self) -> bool {
        self.parts.iter().all(|p| p.status == PartStatus::Extracted)
    }

    /// Fraction of the layer's fasteners taken out; 1 when it has none.
    pub fn clearance(&self, layer: Layer) -> f64 {
        let total = self.parts.iter().filter(|p| p.fastener && p.layer == layer).count();
        if total == 0 {
            return 1.0;
        }
        let out = self
            .parts
            .iter()
            .filter(|p| p.fastener && p.layer == layer && p.status == PartStatus::Extracted)
            .count();
        out as f64 / total as f64
    }
}
