use rand_distr::{Distribution, Normal};

use super::PointCloud;
use crate::error::{Error, Result};
use crate::seed;

/// Gaussian corruption level, as a fraction of the clean cloud's bounding-box
/// diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
}

/// Perturb every coordinate by i.i.d. `N(0, (level * diag)^2)`. Normals are
/// carried over unchanged as clean ground truth.
pub fn add_gaussian_noise(cloud: &PointCloud, spec: NoiseSpec) -> Result<PointCloud> {
    if !(spec.level >= 0.0 && spec.level.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be non-negative, got {}",
            spec.level
        )));
    }
    if spec.level == 0.0 {
        return Ok(cloud.clone());
    }
    let sigma = spec.level * cloud.bbox_diagonal();
    let dist = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = seed::rng(spec.seed);
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let dx = dist.sample(&mut rng);
            let dy = dist.sample(&mut rng);
            let dz = dist.sample(&mut rng);
            p + crate::geom::Vec3::new(dx, dy, dz)
        })
        .collect();
    PointCloud::new(points, cloud.normals().map(|n| n.to_vec()), cloud.name.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{generate_shape, ShapeKind};

    #[test]
    fn zero_level_is_identity_and_negative_rejected() {
        let c = generate_shape(ShapeKind::Cube, 200, 1).unwrap();
        assert_eq!(add_gaussian_noise(&c, NoiseSpec { level: 0.0, seed: 3 }).unwrap(), c);
        assert!(add_gaussian_noise(&c, NoiseSpec { level: -0.1, seed: 3 }).is_err());
    }

    #[test]
    fn deterministic_and_non_mutating() {
        let c = generate_shape(ShapeKind::Sphere, 500, 2).unwrap();
        let before = c.clone();
        let spec = NoiseSpec { level: 0.01, seed: 9 };
        let a = add_gaussian_noise(&c, spec).unwrap();
        let b = add_gaussian_noise(&c, spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(c, before);
        assert_eq!(a.normals(), c.normals());
        assert_ne!(a.points(), c.points());
    }
}
