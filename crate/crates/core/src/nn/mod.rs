//! Dense networks with hand-written reverse-mode gradients.
//!
//! All math is `f64`. Batches are row-major `n x width` matrices; matrix
//! products go through `ndarray`'s GEMM.

mod encoder;
mod estimator;
mod io;
mod layer;
mod optim;

pub use encoder::{EncoderCache, EncoderNet, LATENT_DIM};
pub use estimator::{EstimatorCache, EstimatorNet};
pub use io::{
    estimator_digest, estimator_from_bytes, estimator_to_bytes, load_estimator, load_weights, save_estimator,
    save_weights, weights_digest, weights_from_bytes, weights_to_bytes,
};
pub use layer::{Activation, DenseLayer, LayerGrad, Mlp, MlpGrads};
pub use optim::{sgd_step, OptimizerState, PlateauScheduler};

/// Default per-point encoder widths.
pub const ENCODER_WIDTHS: [usize; 5] = [3, 64, 64, 128, 1024];
/// Default estimator widths.
pub const ESTIMATOR_WIDTHS: [usize; 4] = [1024, 512, 256, 3];
