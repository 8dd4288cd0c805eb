use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{Normal3, Point3, Vec3};
use crate::seed;

/// Analytic shapes with exact outward normals. Cube, tetrahedron and cylinder
/// have sharp edges; sphere and plane are smooth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    /// Axis-aligned cube `[-1, 1]^3`.
    Cube,
    /// Regular tetrahedron inscribed in the cube `[-1, 1]^3`.
    Tetrahedron,
    /// Closed cylinder of radius 1 along z, `z in [-1, 1]`.
    Cylinder,
    /// Unit sphere at the origin.
    Sphere,
    /// Square `[-1, 1]^2` in the `z = 0` plane, normal `+z`.
    Plane,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Cube,
        ShapeKind::Tetrahedron,
        ShapeKind::Cylinder,
        ShapeKind::Sphere,
        ShapeKind::Plane,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Cube => "cube",
            ShapeKind::Tetrahedron => "tetrahedron",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Plane => "plane",
        }
    }

    /// Whether the shape has sharp features.
    pub fn is_cad(&self) -> bool {
        matches!(self, ShapeKind::Cube | ShapeKind::Tetrahedron | ShapeKind::Cylinder)
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape kind '{s}'")))
    }
}

const TETRA: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];

fn sample_cube(rng: &mut ChaCha8Rng) -> (Point3, Vec3) {
    let face = rng.random_range(0..6usize);
    let axis = face / 2;
    let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
    let mut p = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    p[axis] = sign;
    let mut n = Vec3::zeros();
    n[axis] = sign;
    (p, n)
}

fn sample_tetrahedron(rng: &mut ChaCha8Rng) -> (Point3, Vec3) {
    // Face f is opposite vertex f; all faces have equal area.
    let face = rng.random_range(0..4usize);
    let verts: Vec<Vec3> = (0..4).filter(|&i| i != face).map(|i| Vec3::from(TETRA[i])).collect();
    let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    let p = verts[0] + (verts[1] - verts[0]) * u + (verts[2] - verts[0]) * v;
    let n = -Vec3::from(TETRA[face]).normalize();
    (p, n)
}

fn sample_cylinder(rng: &mut ChaCha8Rng) -> (Point3, Vec3) {
    // Side area 4*pi, each cap pi.
    let t: f64 = rng.random_range(0.0..6.0 * PI);
    if t < 4.0 * PI {
        let phi: f64 = rng.random_range(0.0..2.0 * PI);
        let z: f64 = rng.random_range(-1.0..1.0);
        let n = Vec3::new(phi.cos(), phi.sin(), 0.0);
        (Vec3::new(n.x, n.y, z), n)
    } else {
        let sign = if t < 5.0 * PI { 1.0 } else { -1.0 };
        let r = rng.random::<f64>().sqrt();
        let phi: f64 = rng.random_range(0.0..2.0 * PI);
        (Vec3::new(r * phi.cos(), r * phi.sin(), sign), Vec3::new(0.0, 0.0, sign))
    }
}

fn sample_sphere(rng: &mut ChaCha8Rng) -> (Point3, Vec3) {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-9 {
            let u = v / n;
            return (u, u);
        }
    }
}

fn sample_plane(rng: &mut ChaCha8Rng) -> (Point3, Vec3) {
    (
        Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0),
        Vec3::z(),
    )
}

/// Sample `n` points uniformly over the surface of `kind`, with analytic
/// outward unit normals.
pub fn generate_shape(kind: ShapeKind, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 100 {
        return Err(Error::InvalidArgument(format!(
            "shape needs at least 100 points, got {n}"
        )));
    }
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag(kind.name())]));
    let sampler: fn(&mut ChaCha8Rng) -> (Point3, Vec3) = match kind {
        ShapeKind::Cube => sample_cube,
        ShapeKind::Tetrahedron => sample_tetrahedron,
        ShapeKind::Cylinder => sample_cylinder,
        ShapeKind::Sphere => sample_sphere,
        ShapeKind::Plane => sample_plane,
    };
    let (points, normals): (Vec<_>, Vec<_>) = (0..n)
        .map(|_| {
            let (p, nrm) = sampler(&mut rng);
            (p, Normal3::new_unchecked(nrm))
        })
        .unzip();
    PointCloud::new(points, Some(normals), kind.name())
}
