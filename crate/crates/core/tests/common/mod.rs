#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use trinormal::geom::Vec3;
use trinormal::patch::{AlignedPatch, RotationMatrix};
use trinormal::train::{Profile, RunConfig};
use trinormal::triplet::Triplet;
use trinormal::{seed, Normal3, ShapeKind};

/// A run small enough for debug-profile tests: two shapes, a held-out cube,
/// 16-point patches.
pub fn tiny_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::profile(Profile::Toy, seed);
    cfg.shapes = vec![ShapeKind::Cube, ShapeKind::Sphere];
    cfg.validation_shapes = vec![ShapeKind::Cube];
    cfg.points_per_shape = 2000;
    cfg.noise_levels = vec![0.0, 0.01];
    cfg.patches_per_shape = 24;
    cfg.validation_patches_per_shape = 8;
    cfg.k = 16;
    cfg.r_fraction = 0.08;
    cfg.train.encoder_epochs = 3;
    cfg.train.estimator_epochs = 3;
    cfg.train.batch_size = 8;
    cfg
}

/// `k` points on a unit disk in the plane spanned by `u`, `v`, offset by `o`.
pub fn disk(u: Vec3, v: Vec3, o: Vec3, k: usize, seed: u64) -> Array2<f64> {
    let mut rng = seed::rng(seed);
    let mut out = Array2::zeros((k, 3));
    for mut row in out.rows_mut() {
        let (a, b): (f64, f64) = loop {
            let a = rng.random_range(-1.0..1.0);
            let b = rng.random_range(-1.0..1.0);
            if a * a + b * b < 1.0 {
                break (a, b);
            }
        };
        let p = u * (0.7 * a) + v * (0.7 * b) + o;
        row.assign(&ndarray::arr1(&[p.x, p.y, p.z]));
    }
    out
}

pub fn aligned(points: Array2<f64>) -> AlignedPatch {
    let k = points.nrows();
    AlignedPatch {
        points,
        rotation: RotationMatrix::identity(),
        center_index: 0,
        source_indices: vec![0; k],
        radius: 1.0,
        source_name: "synthetic".into(),
    }
}

/// Anchor and positive on parallel planes far apart, negative on a
/// perpendicular plane.
pub fn separable_triplets(n: usize, k: usize) -> Vec<Triplet> {
    let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
    (0..n as u64)
        .map(|i| Triplet {
            anchor: aligned(disk(x, y, Vec3::zeros(), k, 3 * i)),
            positive: aligned(disk(x, y, z * 0.6, k, 3 * i + 1)),
            negative: aligned(disk(x, z, Vec3::zeros(), k, 3 * i + 2)),
            anchor_gt_normal: Normal3::z(),
        })
        .collect()
}
