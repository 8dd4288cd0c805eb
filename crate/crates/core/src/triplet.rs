//! Anchor/positive/negative patch triplets for training the encoder.
//!
//! A positive companion is the closest point whose ground-truth normal lies
//! within `theta_th` of the anchor's (unoriented); a negative is the closest
//! one beyond it. The search starts at the patch radius and grows
//! geometrically up to a cap. Companion patches are rotated by the anchor's
//! PCA frame, not their own.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{unoriented_angle_rad, Normal3, Vec3, UNIT_TOL};
use crate::index::SpatialIndex;
use crate::patch::{
    align_patch, align_with_rotation, extract_patch, read_file, read_patch_block, write_file, write_patch_block,
    AlignedPatch, ByteReader, PatchConfig,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TripletConfig {
    /// Angle threshold in degrees.
    pub theta_th: f64,
    /// Search radius multiplier per expansion round.
    pub search_growth: f64,
    /// Largest search radius, as a multiple of the patch radius.
    pub max_search_factor: f64,
    pub seed: u64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig {
            theta_th: 20.0,
            search_growth: 1.5,
            max_search_factor: 4.0,
            seed: 0,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_th > 0.0 && self.theta_th < 90.0) {
            return Err(Error::InvalidArgument(format!(
                "theta_th must lie in (0, 90), got {}",
                self.theta_th
            )));
        }
        if !(self.search_growth > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "search_growth must exceed 1, got {}",
                self.search_growth
            )));
        }
        if !(self.max_search_factor >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "max_search_factor must be >= 1, got {}",
                self.max_search_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: AlignedPatch,
    pub positive: AlignedPatch,
    pub negative: AlignedPatch,
    /// Ground-truth normal of the anchor's center, in world space.
    pub anchor_gt_normal: Normal3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompanionKind {
    Positive,
    Negative,
}

/// Unoriented angle between two unit normals, in degrees, in `[0, 90]`.
pub fn unoriented_angle(a: &Vec3, b: &Vec3) -> Result<f64> {
    for v in [a, b] {
        if (v.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidArgument(format!(
                "angle input has norm {}, expected 1",
                v.norm()
            )));
        }
    }
    Ok(unoriented_angle_rad(a, b).to_degrees())
}

fn qualifies(kind: CompanionKind, angle_deg: f64, theta_th: f64) -> bool {
    match kind {
        CompanionKind::Positive => angle_deg <= theta_th,
        CompanionKind::Negative => angle_deg > theta_th,
    }
}

/// Closest point (other than the anchor) satisfying the angle predicate,
/// searching radii `r, r*g, r*g^2, ...` up to `max_search_factor * r`.
pub fn find_companion(
    index: &SpatialIndex,
    cloud: &PointCloud,
    anchor_index: usize,
    kind: CompanionKind,
    radius: f64,
    config: &TripletConfig,
) -> Result<Option<usize>> {
    let normals = cloud.require_normals()?;
    let anchor = cloud.points()[anchor_index];
    let anchor_n = normals[anchor_index].as_vec();
    let cap = radius * config.max_search_factor;
    let mut r = radius;
    loop {
        let best = index
            .ball_query(&anchor, r)
            .into_iter()
            .filter(|&i| i != anchor_index)
            .filter(|&i| {
                let angle = unoriented_angle_rad(anchor_n, normals[i].as_vec()).to_degrees();
                qualifies(kind, angle, config.theta_th)
            })
            .map(|i| ((cloud.points()[i] - anchor).norm_squared(), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, i)) = best {
            return Ok(Some(i));
        }
        if r >= cap {
            return Ok(None);
        }
        r = (r * config.search_growth).min(cap);
    }
}

/// Why an anchor produced no triplet.
#[derive(Debug, Clone, PartialEq)]
pub enum SkipReason {
    NoPositive,
    NoNegative,
    Degenerate(String),
}

/// Build the triplet for one anchor, or report why it was skipped.
pub fn build_triplet(
    index: &SpatialIndex,
    cloud: &PointCloud,
    anchor_index: usize,
    patch_config: &PatchConfig,
    triplet_config: &TripletConfig,
) -> Result<std::result::Result<Triplet, SkipReason>> {
    let normals = cloud.require_normals()?;
    let radius = patch_config.radius_for(cloud);
    let Some(pos) = find_companion(
        index,
        cloud,
        anchor_index,
        CompanionKind::Positive,
        radius,
        triplet_config,
    )?
    else {
        return Ok(Err(SkipReason::NoPositive));
    };
    let Some(neg) = find_companion(
        index,
        cloud,
        anchor_index,
        CompanionKind::Negative,
        radius,
        triplet_config,
    )?
    else {
        return Ok(Err(SkipReason::NoNegative));
    };
    let base = patch_config.seed;
    let k = patch_config.k;
    let anchor = match extract_patch(index, cloud, anchor_index, radius)
        .and_then(|raw| align_patch(&raw, k, seed::derive(base, &[0]), &cloud.name))
    {
        Ok(p) => p,
        Err(Error::DegeneratePatch(m)) => return Ok(Err(SkipReason::Degenerate(m))),
        Err(e) => return Err(e),
    };
    let companion = |center: usize, tag: u64| match extract_patch(index, cloud, center, radius) {
        Ok(raw) => Ok(Ok(align_with_rotation(
            &raw,
            anchor.rotation,
            k,
            seed::derive(base, &[tag]),
            &cloud.name,
        ))),
        Err(Error::DegeneratePatch(m)) => Ok(Err(SkipReason::Degenerate(m))),
        Err(e) => Err(e),
    };
    let positive = match companion(pos, 1)? {
        Ok(p) => p,
        Err(s) => return Ok(Err(s)),
    };
    let negative = match companion(neg, 2)? {
        Ok(p) => p,
        Err(s) => return Ok(Err(s)),
    };
    Ok(Ok(Triplet {
        anchor,
        positive,
        negative,
        anchor_gt_normal: normals[anchor_index],
    }))
}

/// Result of mining one cloud.
#[derive(Debug, Clone, Default)]
pub struct TripletSample {
    pub triplets: Vec<Triplet>,
    pub attempted: usize,
    pub skipped_no_positive: usize,
    pub skipped_no_negative: usize,
    pub skipped_degenerate: usize,
}

impl TripletSample {
    pub fn succeeded(&self) -> usize {
        self.triplets.len()
    }
}

/// Draw `count` anchors (without replacement when possible) and build a
/// triplet for each, skipping failures. Deterministic for a fixed seed.
pub fn sample_triplets(
    cloud: &PointCloud,
    index: &SpatialIndex,
    count: usize,
    patch_config: &PatchConfig,
    triplet_config: &TripletConfig,
) -> Result<TripletSample> {
    cloud.require_normals()?;
    patch_config.validate()?;
    triplet_config.validate()?;
    if count == 0 {
        return Err(Error::InvalidArgument("triplet count must be >= 1".into()));
    }
    let mut rng = seed::rng(seed::derive(triplet_config.seed, &[seed::tag("anchors")]));
    let anchors: Vec<usize> = if count <= cloud.len() {
        index::sample(&mut rng, cloud.len(), count).into_vec()
    } else {
        (0..count).map(|_| rng.random_range(0..cloud.len())).collect()
    };
    let results = anchors
        .par_iter()
        .enumerate()
        .map(|(draw, &a)| {
            let pc = patch_config.with_seed(seed::derive(patch_config.seed, &[draw as u64, a as u64]));
            build_triplet(index, cloud, a, &pc, triplet_config)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = TripletSample {
        attempted: anchors.len(),
        ..Default::default()
    };
    for r in results {
        match r {
            Ok(t) => out.triplets.push(t),
            Err(SkipReason::NoPositive) => out.skipped_no_positive += 1,
            Err(SkipReason::NoNegative) => out.skipped_no_negative += 1,
            Err(SkipReason::Degenerate(_)) => out.skipped_degenerate += 1,
        }
    }
    if out.triplets.is_empty() {
        log::warn!(
            "no triplets from '{}' ({} anchors: {} without negative, {} without positive, {} degenerate)",
            cloud.name,
            out.attempted,
            out.skipped_no_negative,
            out.skipped_no_positive,
            out.skipped_degenerate
        );
    }
    Ok(out)
}

const TRIPLET_MAGIC: &[u8; 8] = b"TNTRIP01";

/// Cache format: "TNTRIP01", u64 count, u64 k, then per record three patch
/// blocks (anchor, positive, negative) and the anchor normal as 3 x f64.
pub fn save_triplets(triplets: &[Triplet], path: impl AsRef<Path>) -> Result<()> {
    let k = triplets.first().map_or(0, |t| t.anchor.k());
    let mut out = Vec::new();
    out.extend_from_slice(TRIPLET_MAGIC);
    out.extend_from_slice(&(triplets.len() as u64).to_le_bytes());
    out.extend_from_slice(&(k as u64).to_le_bytes());
    for t in triplets {
        for p in [&t.anchor, &t.positive, &t.negative] {
            if p.k() != k {
                return Err(Error::ShapeMismatch("triplets in one cache must share k".into()));
            }
            write_patch_block(&mut out, p);
        }
        for v in t.anchor_gt_normal.as_vec().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(path.as_ref(), &out)
}

pub fn load_triplets(path: impl AsRef<Path>) -> Result<Vec<Triplet>> {
    let buf = read_file(path.as_ref())?;
    let mut r = ByteReader::new(&buf);
    r.expect_magic(TRIPLET_MAGIC)?;
    let count = r.usize()?;
    let k = r.usize()?;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let anchor = read_patch_block(&mut r, k)?;
        let positive = read_patch_block(&mut r, k)?;
        let negative = read_patch_block(&mut r, k)?;
        let n = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
        let anchor_gt_normal = Normal3::new(n).map_err(|e| Error::CorruptFile(e.to_string()))?;
        out.push(Triplet {
            anchor,
            positive,
            negative,
            anchor_gt_normal,
        });
    }
    r.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{generate_shape, ShapeKind};
    use crate::geom::Point3;

    #[test]
    fn angle_examples() {
        let z = Vec3::z();
        assert_eq!(unoriented_angle(&z, &z).unwrap(), 0.0);
        assert!((unoriented_angle(&z, &Vec3::x()).unwrap() - 90.0).abs() < 1e-12);
        assert_eq!(unoriented_angle(&z, &-z).unwrap(), 0.0);
        assert!(unoriented_angle(&z, &(z * 2.0)).is_err());
    }

    #[test]
    fn plane_has_no_negative() {
        let c = generate_shape(ShapeKind::Plane, 3000, 1).unwrap();
        let idx = SpatialIndex::build(&c);
        let cfg = TripletConfig::default();
        let r = 0.05 * c.bbox_diagonal();
        assert_eq!(
            find_companion(&idx, &c, 0, CompanionKind::Negative, r, &cfg).unwrap(),
            None
        );
        assert!(find_companion(&idx, &c, 0, CompanionKind::Positive, r, &cfg)
            .unwrap()
            .is_some());
        let s = sample_triplets(
            &c,
            &idx,
            50,
            &PatchConfig {
                k: 32,
                ..Default::default()
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(s.succeeded(), 0);
        assert_eq!(s.skipped_no_negative, 50);
    }

    #[test]
    fn missing_normals_is_an_error() {
        let c = PointCloud::new(vec![Point3::zeros(); 5], None, "n").unwrap();
        let idx = SpatialIndex::build(&c);
        assert!(matches!(
            find_companion(&idx, &c, 0, CompanionKind::Positive, 1.0, &TripletConfig::default()),
            Err(Error::MissingNormals)
        ));
    }

    #[test]
    fn companions_share_anchor_rotation() {
        let c = generate_shape(ShapeKind::Cube, 8000, 3).unwrap();
        let idx = SpatialIndex::build(&c);
        let pc = PatchConfig {
            k: 32,
            ..Default::default()
        };
        let s = sample_triplets(&c, &idx, 200, &pc, &TripletConfig::default()).unwrap();
        assert!(s.succeeded() > 0);
        assert_eq!(s.attempted, 200);
        for t in &s.triplets {
            assert_eq!(t.positive.rotation, t.anchor.rotation);
            assert_eq!(t.negative.rotation, t.anchor.rotation);
            assert_eq!(t.anchor.source_name, t.negative.source_name);
        }
    }

    #[test]
    fn triplet_cache_round_trip() {
        let c = generate_shape(ShapeKind::Tetrahedron, 4000, 3).unwrap();
        let idx = SpatialIndex::build(&c);
        let pc = PatchConfig {
            k: 16,
            ..Default::default()
        };
        let s = sample_triplets(&c, &idx, 30, &pc, &TripletConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        save_triplets(&s.triplets, &path).unwrap();
        assert_eq!(load_triplets(&path).unwrap(), s.triplets);
        std::fs::write(&path, b"TNPATCH1").unwrap();
        assert!(matches!(load_triplets(&path), Err(Error::CorruptFile(_))));
    }
}
