//! Point cloud container, file formats, noise corruption and synthetic shapes.

mod io;
mod noise;
mod shapes;

pub use io::{load_cloud, save_cloud, CloudFormat};
pub use noise::{add_gaussian_noise, NoiseSpec};
pub use shapes::{generate_shape, ShapeKind};

use crate::error::{Error, Result};
use crate::geom::{Normal3, Point3};

/// An ordered set of points with optional per-point ground-truth normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<Normal3>>,
    pub name: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, normals: Option<Vec<Normal3>>, name: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument(
                "point cloud must contain at least one point".into(),
            ));
        }
        if let Some(i) = points
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::InvalidArgument(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} normals for {} points",
                    n.len(),
                    points.len()
                )));
            }
        }
        Ok(PointCloud {
            points,
            normals,
            name: name.into(),
        })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Normal3]> {
        self.normals.as_deref()
    }

    /// Ground-truth normals, or [`Error::MissingNormals`].
    pub fn require_normals(&self) -> Result<&[Normal3]> {
        self.normals.as_deref().ok_or(Error::MissingNormals)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Replace the normals; lengths must agree.
    pub fn with_normals(self, normals: Option<Vec<Normal3>>) -> Result<Self> {
        PointCloud::new(self.points, normals, self.name)
    }

    /// Apply `f` to every point, keeping normals untouched.
    pub fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> Result<Self> {
        PointCloud::new(
            self.points.iter().map(f).collect(),
            self.normals.clone(),
            self.name.clone(),
        )
    }

    /// Length of the axis-aligned bounding box diagonal.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (hi - lo).norm()
    }

    /// Centroid of all points.
    pub fn centroid(&self) -> Point3 {
        self.points.iter().sum::<Point3>() / self.points.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect(), None, "t").unwrap()
    }

    #[test]
    fn bbox_diagonal_examples() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        assert!((c.bbox_diagonal() - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(cloud(&[[4.0, -2.0, 1.0]]).bbox_diagonal(), 0.0);
        let corners: Vec<[f64; 3]> = (0..8)
            .map(|i| {
                [
                    2.0 * (i & 1) as f64,
                    2.0 * ((i >> 1) & 1) as f64,
                    2.0 * ((i >> 2) & 1) as f64,
                ]
            })
            .collect();
        assert!((cloud(&corners).bbox_diagonal() - 2.0 * 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(PointCloud::new(vec![], None, "").is_err());
        assert!(PointCloud::new(vec![Point3::zeros()], Some(vec![]), "").is_err());
        assert!(PointCloud::new(vec![Point3::new(f64::INFINITY, 0.0, 0.0)], None, "").is_err());
    }
}
