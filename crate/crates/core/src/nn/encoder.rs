use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::layer::{Activation, Mlp, MlpGrads};
use super::ENCODER_WIDTHS;
use crate::error::{Error, Result};

/// Width of the max-pooled latent vector.
pub const LATENT_DIM: usize = 1024;

/// Shared per-point MLP followed by a coordinate-wise max over points.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNet {
    pub mlp: Mlp,
}

/// Forward state needed for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// Input to every layer (the patch first).
    acts: Vec<Array2<f64>>,
    /// Row achieving the max for each latent channel (first on ties).
    argmax: Vec<usize>,
    pub latent: Array1<f64>,
}

impl EncoderNet {
    pub fn init(seed: u64) -> Self {
        Self::with_widths(&ENCODER_WIDTHS, seed)
    }

    /// Custom hidden widths; must start at 3 and end at [`LATENT_DIM`].
    pub fn with_widths(widths: &[usize], seed: u64) -> Self {
        assert_eq!(widths.first(), Some(&3), "encoder input width must be 3");
        assert_eq!(
            widths.last(),
            Some(&LATENT_DIM),
            "encoder latent width must be {LATENT_DIM}"
        );
        EncoderNet {
            mlp: Mlp::init(widths, Activation::Relu, seed),
        }
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.input_dim() != 3 || mlp.output_dim() != LATENT_DIM {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects 3 -> {LATENT_DIM}, file has {} -> {}",
                mlp.input_dim(),
                mlp.output_dim()
            )));
        }
        Ok(EncoderNet { mlp })
    }

    fn check(&self, patch: &ArrayView2<'_, f64>) -> Result<()> {
        if patch.ncols() != 3 || patch.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "encoder input must be k x 3 with k >= 1, got {:?}",
                patch.dim()
            )));
        }
        Ok(())
    }

    /// Latent vector of one `k x 3` patch.
    pub fn encode(&self, patch: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.check(&patch)?;
        let features = self.mlp.forward(patch);
        Ok(max_rows(&features).0)
    }

    pub fn forward(&self, patch: ArrayView2<'_, f64>) -> Result<EncoderCache> {
        self.check(&patch)?;
        let mut acts = self.mlp.forward_all(patch);
        let features = acts.pop().expect("output present");
        let (latent, argmax) = max_rows(&features);
        Ok(EncoderCache { acts, argmax, latent })
    }

    /// Accumulate parameter gradients for `d_latent` into `grads`.
    pub fn backward(&self, cache: &EncoderCache, d_latent: ArrayView1<'_, f64>, grads: &mut MlpGrads) {
        let n = self.mlp.layers.len();
        let last = &self.mlp.layers[n - 1];
        let input = &cache.acts[n - 1];
        let mut d_input = Array2::<f64>::zeros(input.raw_dim());
        let g = &mut grads.layers[n - 1];
        // Only the argmax row of each channel receives gradient; expand the
        // last layer sparsely instead of forming a dense k x 1024 matrix.
        for (c, (&row, &dz)) in cache.argmax.iter().zip(d_latent.iter()).enumerate() {
            if dz == 0.0 || (last.activation == Activation::Relu && cache.latent[c] <= 0.0) {
                continue;
            }
            let x = input.row(row);
            g.weights.row_mut(c).scaled_add(dz, &x);
            g.bias[c] += dz;
            d_input.row_mut(row).scaled_add(dz, &last.weights.row(c));
        }
        self.mlp.backward_into(&cache.acts, n - 1, d_input, grads, false);
    }
}

fn max_rows(features: &Array2<f64>) -> (Array1<f64>, Vec<usize>) {
    let cols = features.ncols();
    let mut best = features.row(0).to_owned();
    let mut arg = vec![0usize; cols];
    for (r, row) in features.rows().into_iter().enumerate().skip(1) {
        for (c, &v) in row.iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                arg[c] = r;
            }
        }
    }
    (best, arg)
}
