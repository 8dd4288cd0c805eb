//! Full-cloud normal estimation, the PCA baseline, MSAE and reports.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::cloud::{add_gaussian_noise, NoiseSpec, PointCloud};
use crate::error::{Error, Result};
use crate::geom::{unoriented_angle_rad, Normal3, Vec3};
use crate::index::SpatialIndex;
use crate::nn::{EncoderNet, EstimatorNet};
use crate::patch::{preprocess_patch, sorted_eigen, PatchConfig};
use crate::seed;
use crate::train::{build_dataset, train_pipeline, RunConfig};

/// Neighborhood size of the PCA baseline unless stated otherwise.
pub const PCA_BASELINE_K: usize = 20;

/// Relative eigenvalue gap below which a neighborhood counts as collinear.
const COLLINEAR_REL_EPS: f64 = 1e-12;

/// Per-point normals plus a flag for points that needed a fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate {
    pub normals: Vec<Normal3>,
    pub fallback: Vec<bool>,
}

impl NormalEstimate {
    pub fn degenerate_count(&self) -> usize {
        self.fallback.iter().filter(|&&f| f).count()
    }
}

/// Resampling seed of the patch around `p`. Keyed by coordinates rather than
/// index so that reordering the cloud reorders the output identically.
pub fn point_seed(base: u64, p: &Vec3) -> u64 {
    seed::derive(base, &[p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
}

fn covariance_normal(points: &[Vec3]) -> Option<Vec3> {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vec3>() / n;
    let mut cov = crate::geom::Mat3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let (vals, vecs) = sorted_eigen(&(cov / n));
    if !(vals[1] > COLLINEAR_REL_EPS * vals[2].abs().max(f64::MIN_POSITIVE)) {
        return None;
    }
    Some(vecs[0])
}

fn pca_normal_at(
    index: &SpatialIndex,
    cloud: &PointCloud,
    centroid: &Vec3,
    i: usize,
    k: usize,
) -> Result<(Normal3, bool)> {
    let pts = cloud.points();
    let nbrs = index.knn_query(&pts[i], k)?;
    let local: Vec<Vec3> = nbrs.iter().map(|&j| pts[j]).collect();
    match covariance_normal(&local) {
        Some(n) => {
            let n = if n.dot(&(pts[i] - centroid)) < 0.0 { -n } else { n };
            Ok((Normal3::normalize(n)?, false))
        }
        None => Ok((Normal3::z(), true)),
    }
}

/// Classic PCA normals: smallest-eigenvalue eigenvector of each point's
/// k-nearest-neighbor covariance, oriented along centroid-to-point.
/// Collinear neighborhoods get `(0, 0, 1)` and a fallback flag.
pub fn pca_baseline_normals(cloud: &PointCloud, k: usize) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("PCA baseline needs k >= 3, got {k}")));
    }
    if k > cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "PCA baseline k = {k} exceeds the cloud size {}",
            cloud.len()
        )));
    }
    let index = SpatialIndex::build(cloud);
    let centroid = cloud.centroid();
    let out = (0..cloud.len())
        .into_par_iter()
        .map(|i| pca_normal_at(&index, cloud, &centroid, i, k))
        .collect::<Result<Vec<_>>>()?;
    let (normals, fallback) = out.into_iter().unzip();
    Ok(NormalEstimate { normals, fallback })
}

/// Learned normals for every point: pre-process, encode, regress, rotate
/// back with `Rᵀ` and renormalize. Points whose patch is degenerate get the
/// PCA baseline normal and a fallback flag.
pub fn estimate_normals(
    cloud: &PointCloud,
    encoder: &EncoderNet,
    estimator: &EstimatorNet,
    config: &PatchConfig,
) -> Result<NormalEstimate> {
    config.validate()?;
    let index = SpatialIndex::build(cloud);
    let centroid = cloud.centroid();
    let fallback_k = PCA_BASELINE_K.min(cloud.len());
    let out = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let pc = config.with_seed(point_seed(config.seed, &cloud.points()[i]));
            match preprocess_patch(&index, cloud, i, &pc) {
                Ok(patch) => {
                    let latent = encoder.encode(patch.points.view())?;
                    let local = estimator.predict(latent.view())?;
                    let world = patch.rotation.apply_inverse(local.as_vec());
                    Ok((Normal3::normalize(world)?, false))
                }
                Err(Error::DegeneratePatch(_)) => {
                    if fallback_k < 3 {
                        Ok((Normal3::z(), true))
                    } else {
                        Ok((pca_normal_at(&index, cloud, &centroid, i, fallback_k)?.0, true))
                    }
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (normals, fallback) = out.into_iter().unzip();
    let est = NormalEstimate { normals, fallback };
    if est.degenerate_count() > 0 {
        log::warn!(
            "{}: {} degenerate patch(es) fell back to the PCA baseline",
            cloud.name,
            est.degenerate_count()
        );
    }
    Ok(est)
}

/// Mean squared unoriented angular error in radians².
pub fn msae(pred: &[Normal3], gt: &[Normal3]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} ground-truth normals",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("MSAE of an empty normal list".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| unoriented_angle_rad(p.as_vec(), g.as_vec()).powi(2))
        .sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ours,
    OursNoEncoder,
    PcaBaseline,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ours, Method::OursNoEncoder, Method::PcaBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::OursNoEncoder => "ours-no-encoder",
            Method::PcaBaseline => "pca-baseline",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown method '{s}' (ours, ours-no-encoder, pca-baseline)"))
        })
    }
}

/// A trained encoder/estimator pair.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: EncoderNet,
    pub estimator: EstimatorNet,
}

/// Models available to [`run_evaluation`]; the baseline needs none.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub ours: Option<Model>,
    pub no_encoder: Option<Model>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub shape: String,
    pub noise_level: f64,
    pub n_points: usize,
    /// Radians².
    pub msae: f64,
    pub seconds: f64,
    pub degenerate_count: usize,
    pub config_hash: u64,
    /// `(r_fraction, k)` for patch-size sweep rows.
    pub patch_size: Option<(f64, usize)>,
}

/// CSV with one row per report. Sweep reports add `r_fraction,k` columns.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let sweep = reports.iter().any(|r| r.patch_size.is_some());
    let mut s = String::from("method,shape,noise_level,n_points,msae_rad2,seconds,degenerate_count");
    s.push_str(if sweep { ",r_fraction,k\n" } else { "\n" });
    for r in reports {
        let _ = write!(
            s,
            "{},{},{},{},{},{:.3},{}",
            r.method, r.shape, r.noise_level, r.n_points, r.msae, r.seconds, r.degenerate_count
        );
        if sweep {
            match r.patch_size {
                Some((rf, k)) => {
                    let _ = write!(s, ",{rf},{k}");
                }
                None => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    s
}

/// Human-readable aligned table.
pub fn reports_to_table(reports: &[EvalReport]) -> String {
    let mut rows = vec![[
        "method".to_string(),
        "shape".into(),
        "noise".into(),
        "points".into(),
        "msae (rad²)".into(),
        "rms (deg)".into(),
        "seconds".into(),
        "fallback".into(),
    ]];
    for r in reports {
        let method = match r.patch_size {
            Some((rf, k)) => format!("{} (r={rf}, k={k})", r.method),
            None => r.method.clone(),
        };
        rows.push([
            method,
            r.shape.clone(),
            format!("{}", r.noise_level),
            r.n_points.to_string(),
            format!("{:.6}", r.msae),
            format!("{:.2}", r.msae.sqrt().to_degrees()),
            format!("{:.2}", r.seconds),
            r.degenerate_count.to_string(),
        ]);
    }
    let mut widths = [0usize; 8];
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut s = String::new();
    for (ri, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                let pad = w - c.chars().count();
                if i < 2 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
        if ri == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            s.push_str(&"-".repeat(total));
            s.push('\n');
        }
    }
    s
}

/// Normals of one method on one cloud, with elapsed seconds.
pub fn run_method(
    method: Method,
    cloud: &PointCloud,
    models: &Models,
    patch: &PatchConfig,
    pca_k: usize,
) -> Result<(NormalEstimate, f64)> {
    let start = Instant::now();
    let est = match method {
        Method::PcaBaseline => pca_baseline_normals(cloud, pca_k.min(cloud.len()))?,
        Method::Ours | Method::OursNoEncoder => {
            let model = match method {
                Method::Ours => models.ours.as_ref(),
                _ => models.no_encoder.as_ref(),
            }
            .ok_or_else(|| Error::InvalidArgument(format!("method '{method}' needs a trained model")))?;
            estimate_normals(cloud, &model.encoder, &model.estimator, patch)?
        }
    };
    Ok((est, start.elapsed().as_secs_f64()))
}

/// Inputs of [`run_evaluation`].
#[derive(Debug, Clone)]
pub struct EvalSpec {
    pub noise_levels: Vec<f64>,
    pub methods: Vec<Method>,
    pub patch: PatchConfig,
    pub pca_k: usize,
    /// Seeds the noise added to each shape.
    pub seed: u64,
    pub config_hash: u64,
}

/// Noisy copy of a clean cloud for evaluation; deterministic in
/// `(seed, cloud name, level)`.
pub fn noisy_variant(cloud: &PointCloud, level: f64, seed: u64) -> Result<PointCloud> {
    let s = seed::derive(seed, &[seed::tag(&cloud.name), level.to_bits()]);
    add_gaussian_noise(cloud, NoiseSpec { level, seed: s })
}

/// One report per shape × noise level × method, in that nesting order.
/// Ground truth is the clean normals of each shape.
pub fn run_evaluation(shapes: &[PointCloud], models: &Models, spec: &EvalSpec) -> Result<Vec<EvalReport>> {
    for m in &spec.methods {
        if *m != Method::PcaBaseline {
            run_method_precheck(*m, models)?;
        }
    }
    let mut reports = Vec::with_capacity(shapes.len() * spec.noise_levels.len() * spec.methods.len());
    for shape in shapes {
        let gt = shape.require_normals()?;
        for &level in &spec.noise_levels {
            let cloud = noisy_variant(shape, level, spec.seed)?;
            for &method in &spec.methods {
                let (est, seconds) = run_method(method, &cloud, models, &spec.patch, spec.pca_k)?;
                let err = msae(&est.normals, gt)?;
                log::info!("{method} {} @ {level}: msae {err:.6} ({seconds:.2}s)", shape.name);
                reports.push(EvalReport {
                    method: method.name().to_string(),
                    shape: shape.name.clone(),
                    noise_level: level,
                    n_points: cloud.len(),
                    msae: err,
                    seconds,
                    degenerate_count: est.degenerate_count(),
                    config_hash: spec.config_hash,
                    patch_size: None,
                });
            }
        }
    }
    Ok(reports)
}

fn run_method_precheck(method: Method, models: &Models) -> Result<()> {
    let present = match method {
        Method::Ours => models.ours.is_some(),
        Method::OursNoEncoder => models.no_encoder.is_some(),
        Method::PcaBaseline => true,
    };
    if present {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "method '{method}' needs a trained model"
        )))
    }
}

/// The six `(r_fraction, k)` patch sizes of the sweep.
pub const DEFAULT_PATCH_SIZES: [(f64, usize); 6] = [
    (0.01, 20),
    (0.02, 50),
    (0.03, 100),
    (0.04, 250),
    (0.05, 500),
    (0.06, 500),
];

/// Train a full pipeline per patch size under `base`'s budget and evaluate
/// it with the "ours" method on `shapes` × `base.noise_levels`.
pub fn patch_size_sweep(shapes: &[PointCloud], sizes: &[(f64, usize)], base: &RunConfig) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for &(r_fraction, k) in sizes {
        let mut cfg = base.clone();
        cfg.r_fraction = r_fraction;
        cfg.k = k;
        cfg.validate()?;
        log::info!("patch-size sweep: r = {r_fraction}, k = {k}");
        let data = build_dataset(&cfg.dataset_spec())?;
        let hash = cfg.hash();
        let p = train_pipeline(&data.train, &data.validation, &cfg.train, hash)?;
        let models = Models {
            ours: Some(Model {
                encoder: p.encoder,
                estimator: p.estimator,
            }),
            no_encoder: None,
        };
        let spec = EvalSpec {
            noise_levels: cfg.noise_levels.clone(),
            methods: vec![Method::Ours],
            patch: cfg.patch_config(),
            pca_k: PCA_BASELINE_K,
            seed: cfg.seed,
            config_hash: hash,
        };
        for mut r in run_evaluation(shapes, &models, &spec)? {
            r.patch_size = Some((r_fraction, k));
            reports.push(r);
        }
    }
    Ok(reports)
}
