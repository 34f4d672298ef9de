use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{PerceptionError, Pixel, PixelDetection, FRAME_SIZE};
use crate::model::Category;

/// Detector error statistics used to synthesise detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub precision: f64,
    pub recall: f64,
    /// Mean radial 2D localisation error in pixels.
    pub loc_error_px: f64,
    /// Standard deviation of depth samples in meters.
    pub depth_noise_m: f64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel {
            precision: 1.0,
            recall: 1.0,
            loc_error_px: 0.0,
            depth_noise_m: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.precision) || !unit.contains(&self.recall) {
            return Err(PerceptionError::InvalidNoise(format!(
                "precision {} / recall {} outside [0, 1]",
                self.precision, self.recall
            )));
        }
        if !(self.loc_error_px >= 0.0 && self.loc_error_px.is_finite()) {
            return Err(PerceptionError::InvalidNoise(format!(
                "loc_error_px {} must be >= 0",
                self.loc_error_px
            )));
        }
        if !(self.depth_noise_m >= 0.0 && self.depth_noise_m.is_finite()) {
            return Err(PerceptionError::InvalidNoise(format!(
                "depth_noise_m {} must be >= 0",
                self.depth_noise_m
            )));
        }
        if self.precision == 0.0 && self.recall > 0.0 {
            return Err(PerceptionError::InvalidNoise(
                "precision 0 implies infinitely many false positives".into(),
            ));
        }
        Ok(())
    }

    /// Per-axis standard deviation of an isotropic Gaussian whose mean
    /// radial magnitude (Rayleigh mean σ·√(π/2)) equals `loc_error_px`.
    pub fn pixel_sigma(&self) -> f64 {
        self.loc_error_px / (std::f64::consts::PI / 2.0).sqrt()
    }
}

/// A ground-truth part already projected into the current frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VisiblePart {
    pub category: Category,
    pub pixel: Pixel,
}

/// Emits a noisy detection frame for `parts`.
///
/// Each part in the frame is reported with probability `recall` with its
/// centroid jittered by isotropic Gaussian noise. False positives are drawn
/// from a Poisson count whose mean makes the expected precision equal to
/// `noise.precision`; they land uniformly in the frame with a category
/// drawn uniformly from `fp_categories`.
pub fn synthetic_detect<R: Rng + ?Sized>(
    parts: &[VisiblePart],
    noise: &NoiseModel,
    fp_categories: &[Category],
    frame_id: u64,
    rng: &mut R,
) -> Vec<PixelDetection> {
    let sigma = noise.pixel_sigma();
    let jitter = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let max_coord = FRAME_SIZE - 1e-6;
    let mut out = Vec::with_capacity(parts.len() + 2);
    let mut in_frame = 0usize;
    for part in parts {
        if !part.pixel.in_frame() {
            continue;
        }
        in_frame += 1;
        if !rng.random_bool(noise.recall) {
            continue;
        }
        let (du, dv) = if sigma > 0.0 {
            (jitter.sample(rng), jitter.sample(rng))
        } else {
            (0.0, 0.0)
        };
        let centroid = Pixel::new(
            (part.pixel.u + du).clamp(0.0, max_coord),
            (part.pixel.v + dv).clamp(0.0, max_coord),
        );
        let confidence = 0.6 + 0.4 * rng.random::<f64>();
        out.push(PixelDetection {
            category: part.category.clone(),
            confidence,
            centroid,
            frame_id,
        });
    }

    if noise.precision < 1.0 && !fp_categories.is_empty() {
        let expected_tp = in_frame as f64 * noise.recall;
        let mean_fp = expected_tp * (1.0 - noise.precision) / noise.precision;
        if mean_fp > 0.0 {
            let count = Poisson::new(mean_fp).expect("positive mean").sample(rng) as usize;
            for _ in 0..count {
                let category = fp_categories[rng.random_range(0..fp_categories.len())].clone();
                let centroid = Pixel::new(
                    rng.random::<f64>() * max_coord,
                    rng.random::<f64>() * max_coord,
                );
                let confidence = 0.25 + 0.5 * rng.random::<f64>();
                out.push(PixelDetection {
                    category,
                    confidence,
                    centroid,
                    frame_id,
                });
            }
        }
    }
    out
}
