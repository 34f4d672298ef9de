//! Detection replay logs: one CSV row per detection,
//! `frame_id,category,confidence,u,v,depth`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{FramePose, PerceptionError, Pixel, PixelDetection, TrackedPart, Tracker};
use crate::model::Category;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_id: u64,
    pub category: Category,
    pub confidence: f64,
    pub u: f64,
    pub v: f64,
    /// Depth at the centroid in meters.
    pub depth: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {source}")]
    Invalid { row: usize, source: PerceptionError },
    #[error("frame ids must be non-decreasing (row {row}: {frame} after {previous})")]
    OutOfOrder { row: usize, frame: u64, previous: u64 },
}

pub fn read_log<R: Read>(reader: R) -> Result<Vec<DetectionRecord>, ReplayError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<DetectionRecord> = Vec::new();
    for (row, rec) in rdr.deserialize().enumerate() {
        let rec: DetectionRecord = rec?;
        PixelDetection::new(rec.category.clone(), rec.confidence, Pixel::new(rec.u, rec.v), rec.frame_id)
            .map_err(|source| ReplayError::Invalid { row, source })?;
        if let Some(prev) = out.last() {
            if rec.frame_id < prev.frame_id {
                return Err(ReplayError::OutOfOrder {
                    row,
                    frame: rec.frame_id,
                    previous: prev.frame_id,
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_log<W: Write>(writer: W, records: &[DetectionRecord]) -> Result<(), ReplayError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Feeds a recorded log through `tracker` frame by frame and returns the
/// confirmed tracks at the end. A merged detection takes the depth of the
/// nearest raw record in its frame.
pub fn replay(records: &[DetectionRecord], tracker: &mut Tracker, pose: &FramePose) -> Vec<TrackedPart> {
    let mut start = 0;
    while start < records.len() {
        let frame = records[start].frame_id;
        let end = start + records[start..].iter().take_while(|r| r.frame_id == frame).count();
        let rows = &records[start..end];
        let detections: Vec<PixelDetection> = rows
            .iter()
            .map(|r| PixelDetection {
                category: r.category.clone(),
                confidence: r.confidence,
                centroid: Pixel::new(r.u, r.v),
                frame_id: r.frame_id,
            })
            .collect();
        tracker.step(
            frame,
            &detections,
            |d| {
                rows.iter()
                    .filter(|r| r.category == d.category)
                    .min_by(|a, b| {
                        let da = Pixel::new(a.u, a.v).distance(&d.centroid);
                        let db = Pixel::new(b.u, b.v).distance(&d.centroid);
                        da.total_cmp(&db)
                    })
                    .map(|r| r.depth)
                    .ok_or(PerceptionError::NoDepth {
                        u: d.centroid.u,
                        v: d.centroid.v,
                        window: 1,
                    })
            },
            pose,
        );
        start = end;
    }
    tracker.confirmed().cloned().collect()
}
