use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::Uniform;

use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Identity => 0,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Activation::Relu),
            0 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// `y = act(x W^T + b)`, with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }

    /// He-uniform for relu layers, Xavier-uniform otherwise; zero bias.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = match activation {
            Activation::Relu => (6.0 / fan_in as f64).sqrt(),
            Activation::Identity => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        };
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.sample(dist));
        DenseLayer {
            weights,
            bias: Array1::zeros(fan_out),
            activation,
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        if self.activation == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
        z
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients (or velocities) shaped like an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrad>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn shapes_match(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.dim() == l.weights.dim() && g.bias.len() == l.bias.len())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }
}

/// A stack of dense layers applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Relu on every layer except possibly the last.
    pub fn init(widths: &[usize], last: Activation, seed: u64) -> Self {
        assert!(
            widths.len() >= 2 && widths.iter().all(|&w| w > 0),
            "invalid layer widths {widths:?}"
        );
        let mut rng = seed::rng(seed);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { Activation::Relu };
                DenseLayer::init(widths[i], widths[i + 1], act, &mut rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::fan_out))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    /// Forward a batch, returning every layer's input followed by the final
    /// output (`layers.len() + 1` matrices).
    pub fn forward_all(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("non-empty").view());
            acts.push(next);
        }
        acts
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.layers
            .iter()
            .fold(x.to_owned(), |a, layer| layer.forward(a.view()))
    }

    /// Backpropagate `d_out` (gradient w.r.t. the post-activation output of
    /// layer `upto - 1`) through layers `0..upto`. `acts` are as returned by
    /// [`Mlp::forward_all`]. Gradients are accumulated into `grads`. Returns
    /// the gradient w.r.t. the network input when `want_input` is set.
    pub fn backward_into(
        &self,
        acts: &[Array2<f64>],
        upto: usize,
        d_out: Array2<f64>,
        grads: &mut MlpGrads,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let mut d = d_out;
        for i in (0..upto).rev() {
            let layer = &self.layers[i];
            if layer.activation == Activation::Relu {
                Zip::from(&mut d).and(&acts[i + 1]).for_each(|g, &y| {
                    if y <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let g = &mut grads.layers[i];
            // dW += d^T x ; db += column sums of d
            ndarray::linalg::general_mat_mul(1.0, &d.t(), &acts[i], 1.0, &mut g.weights);
            g.bias += &d.sum_axis(Axis(0));
            if i == 0 && !want_input {
                return None;
            }
            d = d.dot(&layer.weights);
        }
        Some(d)
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    /// Mutable access to parameter `i` in [`Mlp::flatten`] order.
    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for l in &mut self.layers {
            if i < l.weights.len() {
                let c = l.weights.ncols();
                return &mut l.weights[[i / c, i % c]];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return &mut l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_with_he_bounds_and_zero_bias() {
        let a = Mlp::init(&[64, 32, 8], Activation::Identity, 3);
        assert_eq!(a, Mlp::init(&[64, 32, 8], Activation::Identity, 3));
        assert_ne!(a, Mlp::init(&[64, 32, 8], Activation::Identity, 4));
        let bound = (6.0f64 / 64.0).sqrt();
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= bound));
        let xb = (6.0f64 / 40.0).sqrt();
        assert!(a.layers[1].weights.iter().all(|w| w.abs() <= xb));
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert_eq!(a.layers[0].activation, Activation::Relu);
        assert_eq!(a.layers[1].activation, Activation::Identity);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = Mlp::init(&[4, 6, 3], Activation::Identity, 9);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin());
        // loss = sum of outputs weighted by fixed coefficients
        let coef = Array2::from_shape_fn((5, 3), |(i, j)| 0.1 * (i as f64) - 0.2 * j as f64 + 0.3);
        let loss = |n: &Mlp| (n.forward(x.view()) * &coef).sum();
        let acts = net.forward_all(x.view());
        let mut grads = MlpGrads::zeros_like(&net);
        net.backward_into(&acts, net.layers.len(), coef.clone(), &mut grads, false);
        let analytic = grads.flatten();
        let h = 1e-6;
        for i in 0..net.num_params() {
            let mut p = net.clone();
            *p.param_mut(i) += h;
            let up = loss(&p);
            *p.param_mut(i) -= 2.0 * h;
            let down = loss(&p);
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - analytic[i]).abs() < 1e-7 * (1.0 + fd.abs()),
                "param {i}: {fd} vs {}",
                analytic[i]
            );
        }
    }
}
