use super::layer::{Mlp, MlpGrads};
use crate::error::{Error, Result};

/// Classic momentum SGD state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub velocity: MlpGrads,
}

impl OptimizerState {
    pub fn new(net: &Mlp, learning_rate: f64, momentum: f64) -> Self {
        OptimizerState {
            learning_rate,
            momentum,
            velocity: MlpGrads::zeros_like(net),
        }
    }
}

/// `v <- momentum * v + g; p <- p - lr * v`. A non-finite gradient leaves
/// both parameters and velocity untouched and returns an error.
pub fn sgd_step(net: &mut Mlp, grads: &MlpGrads, state: &mut OptimizerState) -> Result<()> {
    if !grads.shapes_match(net) || !state.velocity.shapes_match(net) {
        return Err(Error::ShapeMismatch(
            "gradient or velocity shapes do not match the network".into(),
        ));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite("non-finite gradient; step skipped".into()));
    }
    let (lr, mu) = (state.learning_rate, state.momentum);
    for ((layer, g), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut state.velocity.layers) {
        v.weights.zip_mut_with(&g.weights, |v, &g| *v = mu * *v + g);
        v.bias.zip_mut_with(&g.bias, |v, &g| *v = mu * *v + g);
        layer.weights.scaled_add(-lr, &v.weights);
        layer.bias.scaled_add(-lr, &v.bias);
    }
    Ok(())
}

/// Multiply the learning rate by `factor` after `patience` consecutive
/// epochs without improvement of the monitored metric.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub best_metric: f64,
    pub stagnant_count: usize,
    pub learning_rate: f64,
}

/// Minimum decrease that counts as an improvement.
const IMPROVEMENT_EPS: f64 = 1e-12;

impl PlateauScheduler {
    pub fn new(learning_rate: f64, factor: f64, patience: usize) -> Self {
        assert!(learning_rate > 0.0 && factor > 0.0 && factor < 1.0 && patience >= 1);
        PlateauScheduler {
            factor,
            patience,
            best_metric: f64::INFINITY,
            stagnant_count: 0,
            learning_rate,
        }
    }

    /// Record one epoch's metric and return the (possibly reduced) rate.
    pub fn update(&mut self, metric: f64) -> f64 {
        if metric < self.best_metric - IMPROVEMENT_EPS {
            self.best_metric = metric;
            self.stagnant_count = 0;
        } else {
            self.stagnant_count += 1;
            if self.stagnant_count >= self.patience {
                self.learning_rate *= self.factor;
                self.stagnant_count = 0;
            }
        }
        self.learning_rate
    }
}
