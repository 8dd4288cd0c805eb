//! Local patch extraction and normalization: ball neighborhood, translation
//! and scaling to the unit ball, PCA alignment, resampling to `k` points.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::SymmetricEigen;
use ndarray::Array2;
use rand::seq::index;
use rand::Rng;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{Mat3, Point3, Vec3};
use crate::index::SpatialIndex;
use crate::seed;

/// Covariance eigenvalues below this are treated as zero.
pub const DEGENERACY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchConfig {
    /// Points per patch after resampling.
    pub k: usize,
    /// Ball radius as a fraction of the cloud's bounding-box diagonal.
    pub r_fraction: f64,
    pub seed: u64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            k: 500,
            r_fraction: 0.05,
            seed: 0,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 3 {
            return Err(Error::InvalidArgument(format!("patch k must be >= 3, got {}", self.k)));
        }
        if !(self.r_fraction > 0.0 && self.r_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "r_fraction must lie in (0, 1), got {}",
                self.r_fraction
            )));
        }
        Ok(())
    }

    pub fn radius_for(&self, cloud: &PointCloud) -> f64 {
        self.r_fraction * cloud.bbox_diagonal()
    }

    /// Copy of this config with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        PatchConfig { seed, ..*self }
    }
}

/// Neighborhood of a center point in original coordinates.
#[derive(Debug, Clone)]
pub struct RawPatch {
    pub center_index: usize,
    /// Cloud indices of the members, ordered by coordinates so the patch is
    /// independent of the cloud's point order.
    pub indices: Vec<usize>,
    pub points: Vec<Point3>,
    pub radius: f64,
}

impl RawPatch {
    pub fn center(&self) -> Point3 {
        let pos = self.center_position();
        self.points[pos]
    }

    /// Position of the center point within `points`.
    pub fn center_position(&self) -> usize {
        self.indices
            .iter()
            .position(|&i| i == self.center_index)
            .expect("raw patch always contains its center")
    }
}

/// A proper rotation (orthonormal, det +1). Rows are the target x, y, z axes
/// expressed in the source frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Mat3::identity())
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Apply the inverse (transpose).
    pub fn apply_inverse(&self, v: &Vec3) -> Vec3 {
        self.0.tr_mul(v)
    }

    /// Largest deviation of `R^T R` from the identity and of `det R` from 1.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.0.transpose() * self.0 - Mat3::identity()).abs().max();
        e.max((self.0.determinant() - 1.0).abs())
    }
}

/// Network-ready patch: `k` normalized, rotated points plus what is needed
/// to undo the rotation later.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPatch {
    /// `k x 3`, rows in the aligned frame.
    pub points: Array2<f64>,
    pub rotation: RotationMatrix,
    pub center_index: usize,
    /// Cloud index of each row (duplicates where padded).
    pub source_indices: Vec<usize>,
    pub radius: f64,
    pub source_name: String,
}

impl AlignedPatch {
    pub fn k(&self) -> usize {
        self.points.nrows()
    }
}

/// Collect all points strictly within `radius` of the center point.
pub fn extract_patch(index: &SpatialIndex, cloud: &PointCloud, center_index: usize, radius: f64) -> Result<RawPatch> {
    if center_index >= cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "center index {center_index} out of range for {} points",
            cloud.len()
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "patch radius must be positive, got {radius}"
        )));
    }
    let center = cloud.points()[center_index];
    let mut indices = index.ball_query(&center, radius);
    if indices.len() < 3 {
        return Err(Error::DegeneratePatch(format!(
            "patch around point {center_index} has {} point(s), need at least 3",
            indices.len()
        )));
    }
    let pts = cloud.points();
    // Stable sort: coincident points keep ascending index order.
    indices.sort_by(|&a, &b| {
        let (p, q) = (pts[a], pts[b]);
        p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y)).then(p.z.total_cmp(&q.z))
    });
    let points = indices.iter().map(|&i| pts[i]).collect();
    Ok(RawPatch {
        center_index,
        indices,
        points,
        radius,
    })
}

/// `(p - center) / radius` for every point of the patch.
pub fn center_and_scale(patch: &RawPatch) -> Vec<Vec3> {
    let c = patch.center();
    patch.points.iter().map(|p| (p - c) / patch.radius).collect()
}

fn covariance(points: &[Vec3]) -> Mat3 {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov / n
}

fn canonical_sign(v: Vec3) -> Vec3 {
    if v[v.iamax()] < 0.0 {
        -v
    } else {
        v
    }
}

/// Eigenvalues (ascending) with matching unit eigenvectors.
pub(crate) fn sorted_eigen(cov: &Mat3) -> ([f64; 3], [Vec3; 3]) {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.map(|i| eig.eigenvalues[i]);
    let vecs = order.map(|i| eig.eigenvectors.column(i).normalize());
    (vals, vecs)
}

/// Rotation sending the smallest-variance axis to z, the middle to x and the
/// largest to y. Each principal axis is signed so its largest-magnitude
/// component is positive; z is then `x × y`.
pub fn pca_rotation(points: &[Vec3]) -> Result<RotationMatrix> {
    if points.len() < 3 {
        return Err(Error::DegeneratePatch(format!(
            "{} points cannot be PCA-aligned",
            points.len()
        )));
    }
    let (vals, vecs) = sorted_eigen(&covariance(points));
    if vals[0] < DEGENERACY_EPS && vals[1] < DEGENERACY_EPS {
        return Err(Error::DegeneratePatch(format!(
            "collinear or coincident patch (eigenvalues {:.3e}, {:.3e}, {:.3e})",
            vals[0], vals[1], vals[2]
        )));
    }
    let x = canonical_sign(vecs[1]);
    let y = canonical_sign(vecs[2]);
    let z = x.cross(&y).normalize();
    Ok(RotationMatrix(Mat3::from_rows(&[
        x.transpose(),
        y.transpose(),
        z.transpose(),
    ])))
}

/// Row indices selecting exactly `k` of `n` inputs. More than `k`: a random
/// subset without replacement (always including `keep`). Fewer: every input
/// plus uniform duplicates. Output is sorted.
pub fn resample_indices<R: Rng>(n: usize, k: usize, keep: Option<usize>, rng: &mut R) -> Vec<usize> {
    assert!(n >= 1, "cannot resample an empty patch");
    let mut out: Vec<usize> = if n == k {
        (0..n).collect()
    } else if n > k {
        match keep {
            Some(c) => {
                // Draw k-1 from everything except the kept row.
                let mut v: Vec<usize> = index::sample(rng, n - 1, k - 1)
                    .into_iter()
                    .map(|i| if i >= c { i + 1 } else { i })
                    .collect();
                v.push(c);
                v
            }
            None => index::sample(rng, n, k).into_vec(),
        }
    } else {
        let mut v: Vec<usize> = (0..n).collect();
        v.extend((n..k).map(|_| rng.random_range(0..n)));
        v
    };
    out.sort_unstable();
    out
}

/// Resample a point list to exactly `k` rows (see [`resample_indices`]).
pub fn resample_to_k(points: &[Vec3], k: usize, seed: u64) -> Array2<f64> {
    let mut rng = seed::rng(seed);
    let rows = resample_indices(points.len(), k, None, &mut rng);
    rows_to_array(points, &rows)
}

fn rows_to_array(points: &[Vec3], rows: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), 3), |(r, c)| points[rows[r]][c])
}

/// Normalize a raw patch with an externally supplied rotation (used for
/// triplet companions, which share the anchor's rotation).
pub fn align_with_rotation(
    raw: &RawPatch,
    rotation: RotationMatrix,
    k: usize,
    seed: u64,
    source_name: &str,
) -> AlignedPatch {
    let scaled = center_and_scale(raw);
    let rotated: Vec<Vec3> = scaled.iter().map(|p| rotation.apply(p)).collect();
    let mut rng = seed::rng(seed);
    let rows = resample_indices(rotated.len(), k, Some(raw.center_position()), &mut rng);
    AlignedPatch {
        points: rows_to_array(&rotated, &rows),
        rotation,
        center_index: raw.center_index,
        source_indices: rows.iter().map(|&r| raw.indices[r]).collect(),
        radius: raw.radius,
        source_name: source_name.to_string(),
    }
}

/// Align a raw patch by its own PCA frame. PCA runs on the full raw patch,
/// before resampling.
pub fn align_patch(raw: &RawPatch, k: usize, seed: u64, source_name: &str) -> Result<AlignedPatch> {
    let rotation = pca_rotation(&center_and_scale(raw))?;
    Ok(align_with_rotation(raw, rotation, k, seed, source_name))
}

/// Full pre-processing of one center point. The radius is
/// `config.r_fraction * bbox_diagonal(cloud)`; `config.seed` drives resampling.
pub fn preprocess_patch(
    index: &SpatialIndex,
    cloud: &PointCloud,
    center_index: usize,
    config: &PatchConfig,
) -> Result<AlignedPatch> {
    config.validate()?;
    let raw = extract_patch(index, cloud, center_index, config.radius_for(cloud))?;
    align_patch(&raw, config.k, config.seed, &cloud.name)
}

/// Per-patch resampling seed for training-time patches.
pub fn patch_seed(base: u64, center_index: usize) -> u64 {
    seed::derive(base, &[center_index as u64])
}

// ---------------------------------------------------------------------------
// Binary cache: "TNPATCH1", u64 count, u64 k, then per patch:
// u64 center_index, f64 radius, 9 x f64 rotation (row-major),
// u64 name length, name bytes, k x u64 source indices, k x 3 x f64 rows.

pub(crate) const PATCH_MAGIC: &[u8; 8] = b"TNPATCH1";

pub(crate) fn write_patch_block(out: &mut Vec<u8>, p: &AlignedPatch) {
    out.extend_from_slice(&(p.center_index as u64).to_le_bytes());
    out.extend_from_slice(&p.radius.to_le_bytes());
    for r in 0..3 {
        for c in 0..3 {
            out.extend_from_slice(&p.rotation.0[(r, c)].to_le_bytes());
        }
    }
    out.extend_from_slice(&(p.source_name.len() as u64).to_le_bytes());
    out.extend_from_slice(p.source_name.as_bytes());
    for &i in &p.source_indices {
        out.extend_from_slice(&(i as u64).to_le_bytes());
    }
    for v in p.points.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptFile(format!(
                "unexpected end of data at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::CorruptFile("count overflows usize".into()))
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        let got = self.take(8)?;
        if got != magic {
            return Err(Error::CorruptFile(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::CorruptFile(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn read_patch_block(r: &mut ByteReader<'_>, k: usize) -> Result<AlignedPatch> {
    let center_index = r.usize()?;
    let radius = r.f64()?;
    let mut m = Mat3::zeros();
    for row in 0..3 {
        for col in 0..3 {
            m[(row, col)] = r.f64()?;
        }
    }
    let name_len = r.usize()?;
    let source_name = String::from_utf8(r.take(name_len)?.to_vec())
        .map_err(|_| Error::CorruptFile("patch source name is not UTF-8".into()))?;
    let source_indices = (0..k).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let data = (0..k * 3).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    Ok(AlignedPatch {
        points: Array2::from_shape_vec((k, 3), data).expect("k x 3 values"),
        rotation: RotationMatrix(m),
        center_index,
        source_indices,
        radius,
        source_name,
    })
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

fn common_k(patches: &[AlignedPatch]) -> Result<usize> {
    let k = patches.first().map_or(0, AlignedPatch::k);
    if patches.iter().any(|p| p.k() != k) {
        return Err(Error::ShapeMismatch("patches in one cache must share k".into()));
    }
    Ok(k)
}

pub fn save_patches(patches: &[AlignedPatch], path: impl AsRef<Path>) -> Result<()> {
    let k = common_k(patches)?;
    let mut out = Vec::new();
    out.extend_from_slice(PATCH_MAGIC);
    out.extend_from_slice(&(patches.len() as u64).to_le_bytes());
    out.extend_from_slice(&(k as u64).to_le_bytes());
    for p in patches {
        write_patch_block(&mut out, p);
    }
    write_file(path.as_ref(), &out)
}

pub fn load_patches(path: impl AsRef<Path>) -> Result<Vec<AlignedPatch>> {
    let buf = read_file(path.as_ref())?;
    let mut r = ByteReader::new(&buf);
    r.expect_magic(PATCH_MAGIC)?;
    let count = r.usize()?;
    let k = r.usize()?;
    let patches = (0..count)
        .map(|_| read_patch_block(&mut r, k))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(patches)
}
