//! Point cloud normal estimation with a triplet-trained patch encoder.
//!
//! The pipeline has two learned phases. A PointNet-style encoder (shared
//! per-point MLP followed by a max-pool) is trained on triplets of local
//! patches so that patches with similar central normals embed close together.
//! A small MLP regressor then maps the frozen 1024-d latent of a patch to the
//! normal of its central point. Patches are translated, scaled and PCA-aligned
//! before encoding; the inverse rotation recovers the normal in world space.
//!
//! Everything needed to train and check this at desk scale lives here:
//! synthetic shapes with analytic normals, noise corruption, patch
//! pre-processing, triplet mining, a from-scratch dense network with
//! reverse-mode gradients, the training loops and the MSAE evaluation harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod cloud;
pub mod error;
pub mod eval;
pub mod geom;
pub mod index;
pub mod loss;
pub mod nn;
pub mod patch;
pub mod seed;
pub mod train;
pub mod triplet;

pub use cloud::{PointCloud, ShapeKind};
pub use error::{Error, Result};
pub use geom::{Normal3, Point3};
pub use index::SpatialIndex;
