//! Exponent ablation for the normal loss.

use std::fmt::Write as _;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::eval::{msae, noisy_variant, run_method, EvalReport, Method, Model, Models};
use crate::nn::{weights_digest, EncoderNet};
use crate::patch::PatchConfig;
use crate::train::{train_estimator, Corpus, TrainConfig};

pub const DEFAULT_EXPONENTS: [u32; 5] = [2, 4, 6, 8, 10];

/// Noise level of the held-out clouds the ablation is scored on.
pub const ABLATION_NOISE: f64 = 0.005;

#[derive(Debug, Clone, PartialEq)]
pub struct ExponentReport {
    pub exponent: u32,
    /// SHA-256 of the frozen encoder used for this run.
    pub encoder_digest: String,
    pub report: EvalReport,
}

/// Inputs shared by every run of the ablation.
#[derive(Debug, Clone, Copy)]
pub struct AblationInputs<'a> {
    pub train: &'a Corpus,
    pub validation: &'a Corpus,
    pub encoder: &'a EncoderNet,
    /// Clean held-out clouds with ground-truth normals.
    pub shapes: &'a [PointCloud],
    pub patch: PatchConfig,
    pub seed: u64,
    pub config_hash: u64,
}

/// Train one estimator per exponent on the same frozen encoder and corpus,
/// then score each on the held-out shapes at [`ABLATION_NOISE`].
pub fn ablate_exponent(
    inputs: AblationInputs<'_>,
    exponents: &[u32],
    base: &TrainConfig,
) -> Result<Vec<ExponentReport>> {
    if exponents.is_empty() {
        return Err(Error::InvalidArgument("no exponents to ablate".into()));
    }
    for &e in exponents {
        if e == 0 || e % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "exponent must be even and positive, got {e}"
            )));
        }
    }
    let clouds = inputs
        .shapes
        .iter()
        .map(|s| Ok((s, noisy_variant(s, ABLATION_NOISE, inputs.seed)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(exponents.len() * clouds.len());
    for &exponent in exponents {
        let config = TrainConfig {
            exponent,
            ablation_no_encoder: false,
            ..base.clone()
        };
        let trained = train_estimator(
            inputs.train,
            inputs.validation,
            Some(inputs.encoder),
            &config,
            inputs.config_hash,
        )?;
        let digest = weights_digest(&trained.encoder.mlp);
        let models = Models {
            ours: Some(Model {
                encoder: trained.encoder,
                estimator: trained.estimator,
            }),
            no_encoder: None,
        };
        for (clean, noisy) in &clouds {
            let (est, seconds) = run_method(Method::Ours, noisy, &models, &inputs.patch, 0)?;
            let err = msae(&est.normals, clean.require_normals()?)?;
            log::info!("exponent {exponent}: {} msae {err:.6}", clean.name);
            out.push(ExponentReport {
                exponent,
                encoder_digest: digest.clone(),
                report: EvalReport {
                    method: Method::Ours.name().to_string(),
                    shape: clean.name.clone(),
                    noise_level: ABLATION_NOISE,
                    n_points: noisy.len(),
                    msae: err,
                    seconds,
                    degenerate_count: est.degenerate_count(),
                    config_hash: inputs.config_hash,
                    patch_size: None,
                },
            });
        }
    }
    Ok(out)
}

pub fn exponent_reports_to_csv(reports: &[ExponentReport]) -> String {
    let mut s = String::from("exponent,shape,noise_level,n_points,msae_rad2,seconds,degenerate_count,encoder_sha256\n");
    for r in reports {
        let e = &r.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.3},{},{}",
            r.exponent, e.shape, e.noise_level, e.n_points, e.msae, e.seconds, e.degenerate_count, r.encoder_digest
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_list_contains_eight() {
        assert!(DEFAULT_EXPONENTS.contains(&8));
        assert!(DEFAULT_EXPONENTS.iter().all(|e| e % 2 == 0));
    }

    #[test]
    fn odd_exponent_is_rejected_before_training() {
        let corpus = Corpus::default();
        let enc = EncoderNet::with_widths(&[3, 4, 1024], 0);
        let inputs = AblationInputs {
            train: &corpus,
            validation: &corpus,
            encoder: &enc,
            shapes: &[],
            patch: PatchConfig::default(),
            seed: 0,
            config_hash: 0,
        };
        assert!(ablate_exponent(inputs, &[2, 3], &TrainConfig::default()).is_err());
        assert!(ablate_exponent(inputs, &[], &TrainConfig::default()).is_err());
    }
}
