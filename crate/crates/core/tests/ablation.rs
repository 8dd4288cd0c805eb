mod common;

use trinormal::ablation::{ablate_exponent, exponent_reports_to_csv, AblationInputs, ABLATION_NOISE};
use trinormal::cloud::generate_shape;
use trinormal::eval::{patch_size_sweep, reports_to_csv};
use trinormal::train::{build_dataset, train_encoder};
use trinormal::ShapeKind;

#[test]
fn exponent_runs_share_one_frozen_encoder() {
    let cfg = common::tiny_config(4);
    let data = build_dataset(&cfg.dataset_spec()).unwrap();
    let (encoder, _) = train_encoder(&data.train, &data.validation, &cfg.train, cfg.hash()).unwrap();
    let shapes = vec![generate_shape(ShapeKind::Cube, 600, 9).unwrap().with_name("cube-test")];
    let inputs = AblationInputs {
        train: &data.train,
        validation: &data.validation,
        encoder: &encoder,
        shapes: &shapes,
        patch: cfg.patch_config(),
        seed: 4,
        config_hash: cfg.hash(),
    };
    let reports = ablate_exponent(inputs, &[2, 8], &cfg.train).unwrap();
    assert_eq!(reports.iter().map(|r| r.exponent).collect::<Vec<_>>(), [2, 8]);
    assert_eq!(reports[0].encoder_digest, reports[1].encoder_digest);
    assert_eq!(reports[0].encoder_digest, trinormal::nn::weights_digest(&encoder.mlp));
    assert!(reports
        .iter()
        .all(|r| r.report.noise_level == ABLATION_NOISE && r.report.msae.is_finite()));
    assert_ne!(reports[0].report.msae, reports[1].report.msae);

    let csv = exponent_reports_to_csv(&reports);
    assert_eq!(csv.lines().count(), 3);
    let again = ablate_exponent(inputs, &[2, 8], &cfg.train).unwrap();
    assert!(again.iter().zip(&reports).all(|(a, b)| a.report.msae == b.report.msae));
}

#[test]
fn patch_size_sweep_reports_each_size() {
    let mut cfg = common::tiny_config(5);
    cfg.noise_levels = vec![0.0];
    cfg.train.encoder_epochs = 1;
    cfg.train.estimator_epochs = 1;
    let shapes = vec![generate_shape(ShapeKind::Sphere, 500, 2)
        .unwrap()
        .with_name("sphere-test")];
    let sizes = [(0.06, 12), (0.1, 20)];
    let reports = patch_size_sweep(&shapes, &sizes, &cfg).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports.iter().map(|r| r.patch_size.unwrap()).collect::<Vec<_>>(), sizes);
    let csv = reports_to_csv(&reports);
    assert!(csv.lines().next().unwrap().ends_with(",r_fraction,k"));
    assert!(csv.lines().nth(2).unwrap().ends_with(",0.1,20"));
}
