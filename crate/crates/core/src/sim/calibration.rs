//! Iterative frame correction against a known marker.

use thiserror::Error;

use crate::geometry::{Point, RigidTransform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("calibration failed: residual {residual_m:.6} m after {iterations} iterations")]
    NotConverged { iterations: u32, residual_m: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Translation to apply to perceived world points.
    pub offset: RigidTransform,
    /// Measurements taken.
    pub iterations: u32,
    /// Corrective steps applied.
    pub corrections: u32,
}

/// Measures the marker, subtracts the residual, repeats until it is below
/// `tol` (meters). `measure` receives the current correction and returns
/// where the marker appears.
pub fn calibrate_frames<F>(known_marker: &Point, mut measure: F, tol: f64, max_iters: u32) -> Result<Calibration, CalibrationError>
where
    F: FnMut(&RigidTransform) -> Point,
{
    if !(tol > 0.0) {
        return Err(CalibrationError::BadTolerance(tol));
    }
    let mut offset = RigidTransform::identity();
    let mut residual = f64::INFINITY;
    for i in 1..=max_iters {
        let r = measure(&offset) - known_marker;
        residual = r.norm();
        if residual < tol {
            return Ok(Calibration {
                offset,
                iterations: i,
                corrections: i - 1,
            });
        }
        offset = RigidTransform::from_translation(-r).compose(&offset);
    }
    Err(CalibrationError::NotConverged {
        iterations: max_iters,
        residual_m: residual,
    })
}
