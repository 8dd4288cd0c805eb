//! Triplet hinge loss on latent vectors, and the neighbor-weighted
//! cosine-power loss on predicted normals.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Hinge margin of the triplet loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletMargin(f64);

impl TripletMargin {
    pub fn new(m: f64) -> Result<Self> {
        if !(m >= 0.0 && m.is_finite()) {
            return Err(Error::InvalidArgument(format!("triplet margin must be >= 0, got {m}")));
        }
        Ok(TripletMargin(m))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl Default for TripletMargin {
    fn default() -> Self {
        TripletMargin(0.0)
    }
}

/// Angular scale of the neighbor weights, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportAngle(f64);

impl SupportAngle {
    pub fn new(degrees: f64) -> Result<Self> {
        if !(degrees > 0.0 && degrees < 90.0) {
            return Err(Error::InvalidArgument(format!(
                "support angle must lie in (0, 90), got {degrees}"
            )));
        }
        Ok(SupportAngle(degrees))
    }

    pub fn degrees(&self) -> f64 {
        self.0
    }
}

impl Default for SupportAngle {
    fn default() -> Self {
        SupportAngle(15.0)
    }
}

/// Loss value with gradients w.r.t. anchor, positive and negative latents.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub value: f64,
    pub d_anchor: Array1<f64>,
    pub d_positive: Array1<f64>,
    pub d_negative: Array1<f64>,
}

fn unit_or_zero(v: Array1<f64>) -> (f64, Array1<f64>) {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        (n, v / n)
    } else {
        (0.0, v)
    }
}

/// `max(|fP - fS| - |fP - fT| + m, 0)`. The gradient is zero wherever the
/// hinge is inactive, including exactly at the kink.
pub fn triplet_loss(
    f_anchor: ArrayView1<'_, f64>,
    f_positive: ArrayView1<'_, f64>,
    f_negative: ArrayView1<'_, f64>,
    margin: TripletMargin,
) -> TripletLoss {
    assert_eq!(f_anchor.len(), f_positive.len());
    assert_eq!(f_anchor.len(), f_negative.len());
    let (d_pos, u_pos) = unit_or_zero(&f_anchor - &f_positive);
    let (d_neg, u_neg) = unit_or_zero(&f_anchor - &f_negative);
    let arg = d_pos - d_neg + margin.value();
    let n = f_anchor.len();
    if arg <= 0.0 {
        return TripletLoss {
            value: 0.0,
            d_anchor: Array1::zeros(n),
            d_positive: Array1::zeros(n),
            d_negative: Array1::zeros(n),
        };
    }
    TripletLoss {
        value: arg,
        d_anchor: &u_pos - &u_neg,
        d_positive: -u_pos,
        d_negative: u_neg,
    }
}

/// `exp(-(1 - ni·nj) / (1 - cos sigma))`.
pub fn weight_fn(ni: &Vec3, nj: &Vec3, sigma: SupportAngle) -> f64 {
    (-(1.0 - ni.dot(nj)) / (1.0 - sigma.degrees().to_radians().cos())).exp()
}

/// Loss value and gradient w.r.t. the (unit) prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalLoss {
    pub value: f64,
    pub d_pred: Vec3,
}

/// Weighted cosine-power loss with the default exponent 8.
pub fn normal_loss(pred: &Vec3, patch_normals: &[Vec3], center: &Vec3, sigma: SupportAngle) -> Result<NormalLoss> {
    normal_loss_with_exponent(pred, patch_normals, center, sigma, 8)
}

/// `sum_j (1 - (pred·n_j)^e) w_j / sum_j w_j` with `w_j = weight_fn(center, n_j)`.
/// `exponent` must be even and positive, which makes the loss independent of
/// the prediction's orientation.
pub fn normal_loss_with_exponent(
    pred: &Vec3,
    patch_normals: &[Vec3],
    center: &Vec3,
    sigma: SupportAngle,
    exponent: u32,
) -> Result<NormalLoss> {
    if exponent == 0 || !exponent.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "loss exponent must be even and positive, got {exponent}"
        )));
    }
    if patch_normals.is_empty() {
        return Err(Error::InvalidArgument(
            "normal loss needs at least one neighbor normal".into(),
        ));
    }
    let e = exponent as i32;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut grad = Vec3::zeros();
    for n in patch_normals {
        let w = weight_fn(center, n, sigma);
        let c = pred.dot(n);
        num += (1.0 - c.powi(e)) * w;
        den += w;
        grad -= n * (f64::from(exponent) * c.powi(e - 1) * w);
    }
    Ok(NormalLoss {
        value: num / den,
        d_pred: grad / den,
    })
}
