use serde::{Deserialize, Serialize};

use super::{
    associate, back_project, merge_duplicates, smooth, to_world, CameraModel, PerceptionError, Pixel,
    PixelDetection, TrackedPart, WorldDetection,
};
use crate::geometry::RigidTransform;
use crate::model::PartId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub assoc_gate_px: f64,
    pub merge_gate_px: f64,
    pub ema_alpha: f64,
    pub depth_window: usize,
    /// Consecutive unassociated frames after which a track is dropped.
    pub max_misses: u32,
    /// Associations needed before a track is reported to the planner.
    pub min_hits: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            assoc_gate_px: 15.0,
            merge_gate_px: 5.0,
            ema_alpha: 0.3,
            depth_window: 5,
            max_misses: 3,
            min_hits: 3,
        }
    }
}

/// Camera intrinsics and the two transforms that place the camera in the
/// world for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePose {
    pub camera: CameraModel,
    pub hand_eye: RigidTransform,
    pub tcp_pose: RigidTransform,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepSummary {
    pub created: Vec<PartId>,
    pub deleted: Vec<PartId>,
    /// Detections dropped because no depth could be recovered.
    pub depth_failures: usize,
}

/// Frame-to-frame tracker: merge, lift to 3D, associate, smooth.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<TrackedPart>,
    next_id: u32,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Tracker {
            config,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[TrackedPart] {
        &self.tracks
    }

    /// Tracks with enough associations to be trusted.
    pub fn confirmed(&self) -> impl Iterator<Item = &TrackedPart> {
        let min_hits = self.config.min_hits;
        self.tracks.iter().filter(move |t| t.hits >= min_hits)
    }

    pub fn is_alive(&self, id: PartId) -> bool {
        self.tracks.iter().any(|t| t.id == id)
    }

    /// Re-keys a track, used when a fresh track is recognised as an item
    /// the planner already knows.
    pub fn relabel(&mut self, from: PartId, to: PartId) {
        debug_assert!(!self.is_alive(to) || from == to);
        if let Some(t) = self.tracks.iter_mut().find(|t| t.id == from) {
            t.id = to;
        }
    }

    /// Drops a track whose item is known to be gone.
    pub fn forget(&mut self, id: PartId) {
        self.tracks.retain(|t| t.id != id);
    }

    pub fn step<F>(&mut self, frame_id: u64, detections: &[PixelDetection], mut depth: F, pose: &FramePose) -> StepSummary
    where
        F: FnMut(&PixelDetection) -> Result<f64, PerceptionError>,
    {
        let mut summary = StepSummary::default();
        let merged = merge_duplicates(detections, self.config.merge_gate_px);
        let mut lifted = Vec::with_capacity(merged.len());
        for d in merged {
            let point = depth(&d).and_then(|z| back_project(d.centroid, z, &pose.camera));
            match point {
                Ok(p) => lifted.push(WorldDetection {
                    world: to_world(&p, &pose.hand_eye, &pose.tcp_pose),
                    detection: d,
                }),
                Err(_) => summary.depth_failures += 1,
            }
        }

        let assoc = associate(&self.tracks, &lifted, self.config.assoc_gate_px);
        let alpha = self.config.ema_alpha;
        for &(ti, di) in &assoc.pairs {
            let t = &mut self.tracks[ti];
            let d = &lifted[di];
            t.position_world = d.world;
            t.smoothed_position = smooth(&t.smoothed_position, &d.world, alpha);
            t.pixel = Pixel::new(
                alpha * d.detection.centroid.u + (1.0 - alpha) * t.pixel.u,
                alpha * d.detection.centroid.v + (1.0 - alpha) * t.pixel.v,
            );
            t.last_seen_frame = frame_id;
            t.miss_count = 0;
            t.hits += 1;
        }
        for &ti in &assoc.unmatched_tracks {
            self.tracks[ti].miss_count += 1;
        }
        let max_misses = self.config.max_misses;
        self.tracks.retain(|t| {
            if t.miss_count >= max_misses {
                summary.deleted.push(t.id);
                false
            } else {
                true
            }
        });
        for &di in &assoc.unmatched_detections {
            let d = &lifted[di];
            let id = PartId(self.next_id);
            self.next_id += 1;
            self.tracks.push(TrackedPart {
                id,
                category: d.detection.category.clone(),
                position_world: d.world,
                smoothed_position: d.world,
                pixel: d.detection.centroid,
                last_seen_frame: frame_id,
                miss_count: 0,
                hits: 1,
            });
            summary.created.push(id);
        }
        summary
    }
}
