//! Rigid-body helpers shared by perception, planning and simulation.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A position in meters.
pub type Point = Point3<f64>;

/// Tolerance on `RᵀR = I` and `det R = 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (max |RᵀR - I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation determinant is {0}, expected 1")]
    NotProper(f64),
    #[error("transform contains non-finite values")]
    NonFinite,
}

/// Proper rigid transform `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates that `rotation` is orthonormal with unit determinant.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > ROTATION_TOLERANCE {
            return Err(GeometryError::NotOrthonormal(ortho));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::NotProper(det));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Serialized form used in scenario files: row-major rotation and a
/// translation in millimeters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransformSpec {
    #[serde(default = "identity_rows")]
    pub rotation: [[f64; 3]; 3],
    #[serde(default)]
    pub translation_mm: [f64; 3],
}

fn identity_rows() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

impl TransformSpec {
    pub fn to_transform(&self) -> Result<RigidTransform, GeometryError> {
        let r = &self.rotation;
        let rotation = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        RigidTransform::new(rotation, mm_vector(self.translation_mm))
    }
}

pub fn mm_point(mm: [f64; 3]) -> Point {
    Point::new(mm[0] / 1000.0, mm[1] / 1000.0, mm[2] / 1000.0)
}

pub fn mm_vector(mm: [f64; 3]) -> Vector3<f64> {
    Vector3::new(mm[0] / 1000.0, mm[1] / 1000.0, mm[2] / 1000.0)
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    nalgebra::distance(a, b)
}
