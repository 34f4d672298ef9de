//! Detection geometry: lifting 2D detections into the world frame, keeping
//! them associated across frames, and the synthetic detector used by the
//! simulator.

mod synthetic;
mod tracker;

pub mod replay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, RigidTransform};
use crate::model::{Category, PartId};

pub use synthetic::{synthetic_detect, NoiseModel, VisiblePart};
pub use tracker::{FramePose, Tracker, TrackerConfig};

/// Side length of the square detector frame in pixels.
pub const FRAME_SIZE: f64 = 640.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("invalid depth {0}: must be finite and positive")]
    InvalidDepth(f64),
    #[error("no finite depth in {window}x{window} window around ({u}, {v})")]
    NoDepth { u: f64, v: f64, window: usize },
    #[error("pixel ({u}, {v}) outside the frame")]
    OutsideFrame { u: f64, v: f64 },
    #[error("depth window must be odd and >= 1, got {0}")]
    BadWindow(usize),
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Pixel { u, v }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn in_frame(&self) -> bool {
        (0.0..FRAME_SIZE).contains(&self.u) && (0.0..FRAME_SIZE).contains(&self.v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelDetection {
    pub category: Category,
    pub confidence: f64,
    pub centroid: Pixel,
    pub frame_id: u64,
}

impl PixelDetection {
    pub fn new(
        category: Category,
        confidence: f64,
        centroid: Pixel,
        frame_id: u64,
    ) -> Result<Self, PerceptionError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(PerceptionError::InvalidDetection(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        if !centroid.in_frame() {
            return Err(PerceptionError::OutsideFrame {
                u: centroid.u,
                v: centroid.v,
            });
        }
        Ok(PixelDetection {
            category,
            confidence,
            centroid,
            frame_id,
        })
    }
}

/// Pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, PerceptionError> {
        let cam = CameraModel { fx, fy, cx, cy };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(PerceptionError::InvalidCamera(format!(
                "fx={} fy={} cx={} cy={}",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Forward pinhole projection of a camera-frame point. `None` behind
    /// the camera.
    pub fn project(&self, p: &Point) -> Option<Pixel> {
        if p.z <= 0.0 {
            return None;
        }
        Some(Pixel {
            u: self.fx * p.x / p.z + self.cx,
            v: self.fy * p.y / p.z + self.cy,
        })
    }
}

pub fn back_project(pixel: Pixel, depth: f64, camera: &CameraModel) -> Result<Point, PerceptionError> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(PerceptionError::InvalidDepth(depth));
    }
    Ok(Point::new(
        (pixel.u - camera.cx) * depth / camera.fx,
        (pixel.v - camera.cy) * depth / camera.fy,
        depth,
    ))
}

/// Read access to a depth image in meters, indexed `[row v][column u]`.
pub trait DepthGrid {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn at(&self, u: usize, v: usize) -> f64;
}

/// Dense row-major depth image.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        DepthMap {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.data[v * self.width + u] = value;
    }
}

impl DepthGrid for DepthMap {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn at(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }
}

/// Median of the finite samples in the `window`×`window` neighbourhood of
/// `pixel`, clipped at the image border.
pub fn depth_at<G: DepthGrid + ?Sized>(
    grid: &G,
    pixel: Pixel,
    window: usize,
) -> Result<f64, PerceptionError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(PerceptionError::BadWindow(window));
    }
    let (w, h) = (grid.width() as f64, grid.height() as f64);
    if !(pixel.u >= 0.0 && pixel.u < w && pixel.v >= 0.0 && pixel.v < h) {
        return Err(PerceptionError::OutsideFrame {
            u: pixel.u,
            v: pixel.v,
        });
    }
    let (cu, cv) = (pixel.u.floor() as i64, pixel.v.floor() as i64);
    let half = (window / 2) as i64;
    let mut samples = Vec::with_capacity(window * window);
    for v in (cv - half)..=(cv + half) {
        for u in (cu - half)..=(cu + half) {
            if u < 0 || v < 0 || u >= grid.width() as i64 || v >= grid.height() as i64 {
                continue;
            }
            let d = grid.at(u as usize, v as usize);
            if d.is_finite() {
                samples.push(d);
            }
        }
    }
    if samples.is_empty() {
        return Err(PerceptionError::NoDepth {
            u: pixel.u,
            v: pixel.v,
            window,
        });
    }
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    Ok(if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    })
}

/// Camera point → world point through `tcp_pose ∘ hand_eye`.
pub fn to_world(point_camera: &Point, hand_eye: &RigidTransform, tcp_pose: &RigidTransform) -> Point {
    tcp_pose.apply(&hand_eye.apply(point_camera))
}

/// One physical item followed across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedPart {
    pub id: PartId,
    pub category: Category,
    /// Latest unsmoothed world position.
    pub position_world: Point,
    pub smoothed_position: Point,
    /// Smoothed image-space centroid used for association.
    pub pixel: Pixel,
    pub last_seen_frame: u64,
    pub miss_count: u32,
    pub hits: u32,
}

/// A detection already lifted into the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldDetection {
    pub detection: PixelDetection,
    pub world: Point,
}

/// Result of matching detections to existing tracks. Indices refer to the
/// input slices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Greedy class-consistent nearest-neighbour matching in image space.
///
/// Candidate pairs within `gate_px` are taken in ascending distance order;
/// ties go to the lower track id, then the earlier detection.
pub fn associate(tracks: &[TrackedPart], detections: &[WorldDetection], gate_px: f64) -> Association {
    let mut candidates = Vec::new();
    for (ti, t) in tracks.iter().enumerate() {
        for (di, d) in detections.iter().enumerate() {
            if t.category != d.detection.category {
                continue;
            }
            let dist = t.pixel.distance(&d.detection.centroid);
            if dist <= gate_px {
                candidates.push((dist, t.id, di, ti));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    let mut pairs = Vec::new();
    for (_, _, di, ti) in candidates {
        if track_used[ti] || det_used[di] {
            continue;
        }
        track_used[ti] = true;
        det_used[di] = true;
        pairs.push((ti, di));
    }
    pairs.sort_unstable();
    Association {
        pairs,
        unmatched_tracks: (0..tracks.len()).filter(|&i| !track_used[i]).collect(),
        unmatched_detections: (0..detections.len()).filter(|&i| !det_used[i]).collect(),
    }
}

/// Collapses same-category detections that lie within `gate` pixels of
/// each other (single linkage) into one detection at the members' mean
/// centroid with their maximum confidence. Repeats until no two outputs of
/// a category are within the gate, so the result is a fixpoint.
pub fn merge_duplicates(detections: &[PixelDetection], gate: f64) -> Vec<PixelDetection> {
    assert!(gate > 0.0, "merge gate must be positive");
    // (detection, member count) so re-merging keeps the mean over originals.
    let mut groups: Vec<(PixelDetection, usize)> = detections.iter().cloned().map(|d| (d, 1)).collect();
    loop {
        let n = groups.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        let mut merged_any = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (&groups[i].0, &groups[j].0);
                if a.category == b.category && a.centroid.distance(&b.centroid) <= gate {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                        merged_any = true;
                    }
                }
            }
        }
        if !merged_any {
            return groups.into_iter().map(|(d, _)| d).collect();
        }
        let mut next: Vec<(PixelDetection, usize)> = Vec::new();
        let mut slot_of_root = vec![usize::MAX; n];
        // Weighted sums per cluster, kept in first-member order.
        let mut sums: Vec<(f64, f64)> = Vec::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            let (d, w) = &groups[i];
            if slot_of_root[r] == usize::MAX {
                slot_of_root[r] = next.len();
                next.push((d.clone(), 0));
                sums.push((0.0, 0.0));
            }
            let slot = slot_of_root[r];
            let entry = &mut next[slot];
            entry.0.confidence = entry.0.confidence.max(d.confidence);
            entry.0.frame_id = entry.0.frame_id.max(d.frame_id);
            entry.1 += w;
            sums[slot].0 += d.centroid.u * *w as f64;
            sums[slot].1 += d.centroid.v * *w as f64;
        }
        for (entry, (su, sv)) in next.iter_mut().zip(sums) {
            let w = entry.1 as f64;
            entry.0.centroid = Pixel::new(su / w, sv / w);
        }
        groups = next;
    }
}

/// Exponential moving average `alpha·new + (1 − alpha)·prev`.
pub fn smooth(prev: &Point, new: &Point, alpha: f64) -> Point {
    assert!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
    Point::from(prev.coords * (1.0 - alpha) + new.coords * alpha)
}

/// In-plane correction in millimeters that moves the tool so the detected
/// recess centre lands on the optical axis.
pub fn fine_alignment_offset(detected_center: Pixel, optical_axis: Pixel, mm_per_px: f64) -> (f64, f64) {
    assert!(mm_per_px > 0.0, "mm_per_px must be positive");
    (
        (detected_center.u - optical_axis.u) * mm_per_px,
        (detected_center.v - optical_axis.v) * mm_per_px,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel::new(600.0, 600.0, 320.0, 320.0).unwrap()
    }

    fn det(cat: &str, u: f64, v: f64) -> PixelDetection {
        PixelDetection::new(cat.into(), 0.9, Pixel::new(u, v), 0).unwrap()
    }

    fn track(id: u32, cat: &str, u: f64, v: f64) -> TrackedPart {
        TrackedPart {
            id: PartId(id),
            category: cat.into(),
            position_world: Point::origin(),
            smoothed_position: Point::origin(),
            pixel: Pixel::new(u, v),
            last_seen_frame: 0,
            miss_count: 0,
            hits: 1,
        }
    }

    fn wdet(cat: &str, u: f64, v: f64) -> WorldDetection {
        WorldDetection {
            detection: det(cat, u, v),
            world: Point::origin(),
        }
    }

    #[test]
    fn principal_ray() {
        let p = back_project(Pixel::new(320.0, 320.0), 0.5, &cam()).unwrap();
        assert_eq!(p, Point::new(0.0, 0.0, 0.5));
    }

    #[test]
    fn back_project_offset_pixel() {
        // (380 - 320) * 0.5 / 600 = 0.05
        let p = back_project(Pixel::new(380.0, 320.0), 0.5, &cam()).unwrap();
        assert!((p.x - 0.05).abs() < 1e-15);
        assert_eq!(p.y, 0.0);
        assert_eq!(p.z, 0.5);
    }

    #[test]
    fn back_project_rejects_bad_depth() {
        for d in [0.0, -0.1, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                back_project(Pixel::new(1.0, 1.0), d, &cam()),
                Err(PerceptionError::InvalidDepth(_))
            ));
        }
    }

    #[test]
    fn camera_rejects_nonpositive_focal() {
        assert!(CameraModel::new(0.0, 600.0, 320.0, 320.0).is_err());
        assert!(CameraModel::new(600.0, -1.0, 320.0, 320.0).is_err());
    }

    #[test]
    fn detection_invariants() {
        assert!(PixelDetection::new("screw".into(), 1.2, Pixel::new(1.0, 1.0), 0).is_err());
        assert!(PixelDetection::new("screw".into(), 0.5, Pixel::new(640.0, 1.0), 0).is_err());
        assert!(PixelDetection::new("screw".into(), 0.5, Pixel::new(639.9, 0.0), 0).is_ok());
    }

    #[test]
    fn depth_identity_window() {
        let mut map = DepthMap::filled(8, 8, 1.0);
        map.set(3, 5, 0.42);
        assert_eq!(depth_at(&map, Pixel::new(3.0, 5.0), 1).unwrap(), 0.42);
    }

    #[test]
    fn depth_median_rejects_outlier() {
        let mut map = DepthMap::filled(8, 8, 0.5);
        map.set(4, 4, 9.9);
        assert_eq!(depth_at(&map, Pixel::new(4.0, 4.0), 3).unwrap(), 0.5);
    }

    #[test]
    fn depth_all_nan() {
        let map = DepthMap::filled(8, 8, f64::NAN);
        assert!(matches!(
            depth_at(&map, Pixel::new(4.0, 4.0), 3),
            Err(PerceptionError::NoDepth { .. })
        ));
    }

    #[test]
    fn depth_skips_nan_and_clips_border() {
        let mut map = DepthMap::filled(4, 4, f64::NAN);
        map.set(0, 0, 0.3);
        map.set(1, 0, 0.5);
        // corner window only sees 4 cells, two finite
        assert_eq!(depth_at(&map, Pixel::new(0.2, 0.7), 3).unwrap(), 0.4);
    }

    #[test]
    fn depth_window_must_be_odd() {
        let map = DepthMap::filled(4, 4, 1.0);
        assert!(matches!(depth_at(&map, Pixel::new(1.0, 1.0), 2), Err(PerceptionError::BadWindow(2))));
        assert!(matches!(depth_at(&map, Pixel::new(9.0, 1.0), 1), Err(PerceptionError::OutsideFrame { .. })));
    }

    #[test]
    fn to_world_identity_and_translation() {
        let id = RigidTransform::identity();
        assert_eq!(to_world(&Point::new(1.0, 2.0, 3.0), &id, &id), Point::new(1.0, 2.0, 3.0));
        let he = RigidTransform::from_translation(nalgebra::Vector3::new(0.0, 0.0, 0.1));
        assert_eq!(to_world(&Point::origin(), &he, &id), Point::new(0.0, 0.0, 0.1));
    }

    #[test]
    fn associate_single_pair() {
        let a = associate(&[track(0, "screw", 100.0, 100.0)], &[wdet("screw", 103.0, 100.0)], 15.0);
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert!(a.unmatched_tracks.is_empty() && a.unmatched_detections.is_empty());
    }

    #[test]
    fn associate_is_class_consistent() {
        let a = associate(&[track(0, "screw", 100.0, 100.0)], &[wdet("lid", 101.0, 100.0)], 15.0);
        assert!(a.pairs.is_empty());
        assert_eq!(a.unmatched_tracks, vec![0]);
        assert_eq!(a.unmatched_detections, vec![0]);
    }

    #[test]
    fn associate_prefers_nearest_track() {
        let tracks = [track(0, "screw", 110.0, 100.0), track(1, "screw", 102.0, 100.0)];
        let a = associate(&tracks, &[wdet("screw", 100.0, 100.0)], 15.0);
        assert_eq!(a.pairs, vec![(1, 0)]);
        assert_eq!(a.unmatched_tracks, vec![0]);
    }

    #[test]
    fn associate_gate_and_tie() {
        let a = associate(&[track(0, "screw", 0.0, 0.0)], &[wdet("screw", 16.0, 0.0)], 15.0);
        assert!(a.pairs.is_empty());
        // equidistant tracks: lower id wins
        let tracks = [track(5, "screw", 110.0, 100.0), track(2, "screw", 90.0, 100.0)];
        let a = associate(&tracks, &[wdet("screw", 100.0, 100.0)], 15.0);
        assert_eq!(a.pairs, vec![(1, 0)]);
    }

    #[test]
    fn merge_pair_averages() {
        let out = merge_duplicates(&[det("screw", 100.0, 100.0), det("screw", 102.0, 100.0)], 5.0);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].centroid, Pixel::new(101.0, 100.0));
    }

    #[test]
    fn merge_keeps_distant() {
        let out = merge_duplicates(&[det("screw", 100.0, 100.0), det("screw", 150.0, 100.0)], 5.0);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn merge_chain_single_linkage() {
        // 100-104-108: endpoints are 8 px apart but linked through the middle
        let mut a = det("screw", 100.0, 100.0);
        a.confidence = 0.4;
        let out = merge_duplicates(&[a, det("screw", 104.0, 100.0), det("screw", 108.0, 100.0)], 5.0);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].centroid, Pixel::new(104.0, 100.0));
        assert_eq!(out[0].confidence, 0.9);
    }

    #[test]
    fn merge_ignores_other_categories() {
        let out = merge_duplicates(&[det("screw", 100.0, 100.0), det("lid", 101.0, 100.0)], 5.0);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn smooth_cases() {
        let p = Point::new(0.0, 0.0, 0.0);
        let q = Point::new(1.0, 0.0, 0.0);
        assert_eq!(smooth(&p, &q, 1.0), q);
        assert_eq!(smooth(&p, &q, 0.5), Point::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn smooth_converges_within_log_bound() {
        let alpha: f64 = 0.3;
        let steps = ((1e-6f64).ln() / (1.0 - alpha).ln()).ceil() as usize;
        assert_eq!(steps, 39);
        let target = Point::new(1.0, -2.0, 0.5);
        let mut p = Point::new(0.0, 0.0, 0.0);
        for _ in 0..steps {
            p = smooth(&p, &target, alpha);
        }
        // initial error per axis is at most 2, scaled by (1-alpha)^steps
        assert!((p - target).abs().max() <= 2.0 * 1e-6);
        let mut q = Point::new(0.0, 0.0, 0.0);
        let unit = Point::new(1.0, 1.0, 1.0);
        for _ in 0..steps {
            q = smooth(&q, &unit, alpha);
        }
        assert!((q - unit).abs().max() < 1e-6);
    }

    #[test]
    fn fine_offset() {
        let axis = Pixel::new(320.0, 240.0);
        assert_eq!(fine_alignment_offset(axis, axis, 0.05), (0.0, 0.0));
        let (dx, dy) = fine_alignment_offset(Pixel::new(330.0, 236.0), axis, 0.05);
        assert!((dx - 0.5).abs() < 1e-12 && (dy + 0.2).abs() < 1e-12);
        // shifting the detection by the correction leaves zero residual
        let corrected = Pixel::new(330.0 - dx / 0.05, 236.0 - dy / 0.05);
        let (rx, ry) = fine_alignment_offset(corrected, axis, 0.05);
        assert!(rx.abs() < 1e-9 && ry.abs() < 1e-9);
    }
}
