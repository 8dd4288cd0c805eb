use rand::seq::index;
use rayon::prelude::*;

use super::config::{DatasetSpec, ShapeSpec};
use crate::cloud::{add_gaussian_noise, generate_shape, NoiseSpec, PointCloud};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::index::SpatialIndex;
use crate::patch::{patch_seed, preprocess_patch, AlignedPatch, PatchConfig};
use crate::seed;
use crate::triplet::{sample_triplets, Triplet, TripletConfig};

/// A patch with its ground-truth normals expressed in the patch's aligned
/// frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub patch: AlignedPatch,
    /// Rotated clean normal of every row of `patch.points`.
    pub normals: Vec<Vec3>,
    /// Rotated clean normal of the center point.
    pub center_normal: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSummary {
    pub name: String,
    pub noise_level: f64,
    pub n_points: usize,
    pub triplets_attempted: usize,
    pub triplets: usize,
    pub labeled: usize,
}

/// Triplets for the encoder phase and labeled patches for the estimator phase.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub triplets: Vec<Triplet>,
    pub labeled: Vec<LabeledPatch>,
    pub shapes: Vec<ShapeSummary>,
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Corpus,
    pub validation: Corpus,
}

/// One noisy variant of a shape.
#[derive(Debug, Clone)]
pub struct CorpusCloud {
    pub cloud: PointCloud,
    pub noise_level: f64,
    pub validation: bool,
}

/// Source name of a shape variant, e.g. `cube@0.005`.
pub fn variant_name(shape: &str, level: f64) -> String {
    format!("{shape}@{level}")
}

fn clouds_for(spec: &DatasetSpec, shapes: &[ShapeSpec], validation: bool) -> Result<Vec<CorpusCloud>> {
    let mut out = Vec::new();
    for s in shapes {
        let clean = generate_shape(s.kind, s.n_points, s.seed)?;
        for (li, &level) in spec.noise_levels.iter().enumerate() {
            let noise = NoiseSpec {
                level,
                seed: seed::derive(s.seed, &[seed::tag("noise"), li as u64]),
            };
            let cloud = add_gaussian_noise(&clean, noise)?.with_name(variant_name(&s.name, level));
            out.push(CorpusCloud {
                cloud,
                noise_level: level,
                validation,
            });
        }
    }
    Ok(out)
}

/// Every shape x noise variant described by `spec`, training shapes first.
/// Noisy variants keep the clean normals as labels.
pub fn make_clouds(spec: &DatasetSpec) -> Result<Vec<CorpusCloud>> {
    let mut v = clouds_for(spec, &spec.train_shapes, false)?;
    v.extend(clouds_for(spec, &spec.validation_shapes, true)?);
    Ok(v)
}

/// Pre-process `count` uniformly drawn centers and attach rotated labels.
/// Degenerate centers are dropped.
pub fn labeled_patches(
    cloud: &PointCloud,
    index: &SpatialIndex,
    count: usize,
    config: &PatchConfig,
    draw_seed: u64,
) -> Result<Vec<LabeledPatch>> {
    let normals = cloud.require_normals()?;
    let mut rng = seed::rng(draw_seed);
    let centers: Vec<usize> = if count <= cloud.len() {
        index::sample(&mut rng, cloud.len(), count).into_vec()
    } else {
        (0..count).map(|i| i % cloud.len()).collect()
    };
    let results: Vec<Result<Option<LabeledPatch>>> = centers
        .par_iter()
        .enumerate()
        .map(|(draw, &c)| {
            let pc = config.with_seed(seed::derive(patch_seed(config.seed, c), &[draw as u64]));
            match preprocess_patch(index, cloud, c, &pc) {
                Ok(patch) => {
                    let m = patch.rotation.matrix();
                    let rows = patch.source_indices.iter().map(|&i| m * normals[i].as_vec()).collect();
                    let center_normal = m * normals[c].as_vec();
                    Ok(Some(LabeledPatch {
                        patch,
                        normals: rows,
                        center_normal,
                    }))
                }
                Err(Error::DegeneratePatch(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    results.into_iter().filter_map(Result::transpose).collect()
}

fn add_variant(corpus: &mut Corpus, cc: &CorpusCloud, count: usize, spec: &DatasetSpec, ordinal: u64) -> Result<()> {
    let cloud = &cc.cloud;
    let index = SpatialIndex::build(cloud);
    let tag = seed::tag(&cloud.name);
    let pc = spec.patch.with_seed(seed::derive(spec.patch.seed, &[tag, ordinal]));
    let tc = TripletConfig {
        seed: seed::derive(spec.triplet.seed, &[tag, ordinal]),
        ..spec.triplet.clone()
    };
    let sample = sample_triplets(cloud, &index, count, &pc, &tc)?;
    let labeled = labeled_patches(
        cloud,
        &index,
        count,
        &spec
            .patch
            .with_seed(seed::derive(spec.patch.seed, &[tag, ordinal, seed::tag("labeled")])),
        seed::derive(spec.seed, &[tag, ordinal, seed::tag("centers")]),
    )?;
    if sample.triplets.is_empty() {
        log::warn!(
            "'{}' yields no triplets; it contributes labeled patches only",
            cloud.name
        );
    }
    log::info!(
        "{}: {}/{} triplets, {} labeled patches",
        cloud.name,
        sample.succeeded(),
        sample.attempted,
        labeled.len()
    );
    corpus.shapes.push(ShapeSummary {
        name: cloud.name.clone(),
        noise_level: cc.noise_level,
        n_points: cloud.len(),
        triplets_attempted: sample.attempted,
        triplets: sample.succeeded(),
        labeled: labeled.len(),
    });
    corpus.triplets.extend(sample.triplets);
    corpus.labeled.extend(labeled);
    Ok(())
}

/// Generate every shape x noise variant, then mine triplets and labeled
/// patches from each. Validation shapes go to a separate corpus.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Datasets> {
    spec.validate()?;
    let mut train = Corpus::default();
    let mut validation = Corpus::default();
    for (i, cc) in make_clouds(spec)?.iter().enumerate() {
        if cc.validation {
            add_variant(
                &mut validation,
                cc,
                spec.validation_patches_per_shape.max(1),
                spec,
                i as u64,
            )?;
        } else {
            add_variant(&mut train, cc, spec.patches_per_shape, spec, i as u64)?;
        }
    }
    if train.labeled.is_empty() {
        return Err(Error::EmptyDataset("no labeled training patches".into()));
    }
    Ok(Datasets { train, validation })
}
