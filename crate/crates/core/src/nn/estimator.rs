use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::layer::{Activation, Mlp, MlpGrads};
use super::{ENCODER_WIDTHS, ESTIMATOR_WIDTHS};
use crate::error::{Error, Result};
use crate::geom::{Normal3, Vec3};

/// Smallest pre-normalization output norm accepted.
pub const MIN_OUTPUT_NORM: f64 = 1e-12;

/// MLP from a latent vector to a unit normal (explicitly normalized).
///
/// Latents are shifted by a fixed `input_offset` before the first layer. It is
/// fitted once (mean training latent) before the estimator is trained and is
/// not a trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorNet {
    pub mlp: Mlp,
    pub input_offset: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct EstimatorCache {
    acts: Vec<Array2<f64>>,
    norms: Array1<f64>,
    /// Unit outputs, `n x 3`.
    pub output: Array2<f64>,
}

impl EstimatorNet {
    pub fn init(seed: u64) -> Self {
        Self::with_widths(&ESTIMATOR_WIDTHS, seed)
    }

    pub fn with_widths(widths: &[usize], seed: u64) -> Self {
        assert_eq!(widths.last(), Some(&3), "estimator output width must be 3");
        EstimatorNet {
            mlp: Mlp::init(widths, Activation::Identity, seed),
            input_offset: Array1::zeros(widths[0]),
        }
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        let latent = *ENCODER_WIDTHS.last().expect("non-empty");
        if mlp.input_dim() != latent || mlp.output_dim() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "estimator expects {latent} -> 3, file has {} -> {}",
                mlp.input_dim(),
                mlp.output_dim()
            )));
        }
        let input_offset = Array1::zeros(latent);
        Ok(EstimatorNet { mlp, input_offset })
    }

    /// Network with an explicit input offset.
    pub fn from_parts(mlp: Mlp, input_offset: Array1<f64>) -> Result<Self> {
        let mut net = Self::from_mlp(mlp)?;
        if input_offset.len() != net.input_offset.len() {
            return Err(Error::ShapeMismatch(format!(
                "input offset has {} entries, estimator input is {}",
                input_offset.len(),
                net.input_offset.len()
            )));
        }
        if input_offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("estimator input offset".into()));
        }
        net.input_offset = input_offset;
        Ok(net)
    }

    /// Set the input offset to the mean of `latents` (`n x width`).
    pub fn fit_input_offset(&mut self, latents: ArrayView2<'_, f64>) -> Result<()> {
        if latents.ncols() != self.input_offset.len() {
            return Err(Error::ShapeMismatch(format!(
                "latent width {} != estimator input {}",
                latents.ncols(),
                self.input_offset.len()
            )));
        }
        self.input_offset = latents
            .mean_axis(Axis(0))
            .ok_or_else(|| Error::EmptyDataset("no latents to fit the input offset".into()))?;
        Ok(())
    }

    /// Forward a batch of latents (`n x 1024`).
    pub fn forward(&self, latents: ArrayView2<'_, f64>) -> Result<EstimatorCache> {
        if latents.ncols() != self.mlp.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "estimator input width {} != {}",
                latents.ncols(),
                self.mlp.input_dim()
            )));
        }
        if latents.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("estimator input contains non-finite values".into()));
        }
        let shifted = &latents - &self.input_offset;
        let acts = self.mlp.forward_all(shifted.view());
        let raw = acts.last().expect("output present");
        let norms = raw.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        if let Some(&bad) = norms.iter().find(|&&n| !(n >= MIN_OUTPUT_NORM)) {
            return Err(Error::UnstableOutput(bad));
        }
        let output = raw / &norms.view().insert_axis(Axis(1));
        Ok(EstimatorCache { acts, norms, output })
    }

    /// Unit normal for a single latent.
    pub fn predict(&self, latent: ArrayView1<'_, f64>) -> Result<Normal3> {
        let cache = self.forward(latent.insert_axis(Axis(0)))?;
        let o = cache.output.row(0);
        Ok(Normal3::new_unchecked(Vec3::new(o[0], o[1], o[2])))
    }

    /// Backpropagate `d_unit` (gradient w.r.t. the normalized outputs)
    /// through the normalization and the MLP.
    pub fn backward(
        &self,
        cache: &EstimatorCache,
        d_unit: &Array2<f64>,
        grads: &mut MlpGrads,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        // d raw = (d_u - u (u . d_u)) / |raw|
        let mut d_raw = d_unit.clone();
        for ((mut row, u), &n) in d_raw
            .rows_mut()
            .into_iter()
            .zip(cache.output.rows())
            .zip(cache.norms.iter())
        {
            let proj = row.dot(&u);
            row.scaled_add(-proj, &u);
            row /= n;
        }
        self.mlp
            .backward_into(&cache.acts, self.mlp.layers.len(), d_raw, grads, want_input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outputs_are_unit_and_deterministic() {
        let net = EstimatorNet::with_widths(&[1024, 32, 3], 2);
        for t in 0..50 {
            let z = Array1::from_shape_fn(1024, |i| ((i * (t + 1)) as f64 * 0.01).sin());
            let a = net.predict(z.view()).unwrap();
            assert!((a.as_vec().norm() - 1.0).abs() < 1e-12);
            assert_eq!(a, net.predict(z.view()).unwrap());
        }
    }

    #[test]
    fn zero_output_is_unstable() {
        let mut net = EstimatorNet::with_widths(&[1024, 4, 3], 2);
        net.mlp.layers[1].weights.fill(0.0);
        assert!(matches!(
            net.predict(Array1::ones(1024).view()),
            Err(Error::UnstableOutput(_))
        ));
    }

    #[test]
    fn gradient_through_normalization() {
        let net = EstimatorNet::with_widths(&[1024, 5, 3], 8);
        let z = Array2::from_shape_fn((2, 1024), |(r, i)| ((i + 7 * r) as f64 * 0.021).cos());
        let target = Array2::from_shape_fn((2, 3), |(r, j)| [0.3, -0.5, 0.8][j] * (r as f64 + 1.0));
        let loss = |n: &EstimatorNet| (&n.forward(z.view()).unwrap().output * &target).sum();
        let cache = net.forward(z.view()).unwrap();
        let mut grads = MlpGrads::zeros_like(&net.mlp);
        let d_in = net.backward(&cache, &target, &mut grads, true).unwrap();
        let analytic = grads.flatten();
        let h = 1e-6;
        for i in (0..net.mlp.num_params()).step_by(97) {
            let mut q = net.clone();
            *q.mlp.param_mut(i) += h;
            let up = loss(&q);
            *q.mlp.param_mut(i) -= 2.0 * h;
            let fd = (up - loss(&q)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}");
        }
        let mut zp = z.clone();
        zp[[1, 10]] += h;
        let up = (&net.forward(zp.view()).unwrap().output * &target).sum();
        zp[[1, 10]] -= 2.0 * h;
        let down = (&net.forward(zp.view()).unwrap().output * &target).sum();
        assert!(((up - down) / (2.0 * h) - d_in[[1, 10]]).abs() < 1e-6);
    }
}
