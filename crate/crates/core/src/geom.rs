//! Small geometric types shared across the crate.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// A point in model units.
pub type Point3 = Vec3;

/// Tolerance on the norm of a unit normal.
pub const UNIT_TOL: f64 = 1e-6;

/// A unit-length surface normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normal3(Vec3);

impl Normal3 {
    /// Wrap a vector that is already unit length (within [`UNIT_TOL`]).
    pub fn new(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidArgument(format!(
                "normal ({}, {}, {}) has norm {n}, expected 1",
                v.x, v.y, v.z
            )));
        }
        Ok(Normal3(v))
    }

    /// Normalize an arbitrary non-zero vector.
    pub fn normalize(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !(n.is_finite() && n > 1e-300) {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize vector ({}, {}, {})",
                v.x, v.y, v.z
            )));
        }
        Ok(Normal3(v / n))
    }

    pub(crate) fn new_unchecked(v: Vec3) -> Self {
        Normal3(v)
    }

    pub fn x() -> Self {
        Normal3(Vec3::x())
    }

    pub fn z() -> Self {
        Normal3(Vec3::z())
    }

    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }

    pub fn into_vec(self) -> Vec3 {
        self.0
    }

    pub fn dot(&self, other: &Normal3) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn flipped(&self) -> Self {
        Normal3(-self.0)
    }

    /// Rotate by an orthonormal matrix, renormalizing to absorb rounding.
    pub fn rotated(&self, m: &Mat3) -> Self {
        let v = m * self.0;
        Normal3(v / v.norm())
    }
}

impl From<Normal3> for Vec3 {
    fn from(n: Normal3) -> Vec3 {
        n.0
    }
}

/// Unoriented angle in radians: `acos(clamp(|a·b|, 0, 1))`.
pub fn unoriented_angle_rad(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b).abs().clamp(0.0, 1.0).acos()
}
