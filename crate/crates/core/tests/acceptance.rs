//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//! Exits non-zero when any criterion outside [`NON_GATING`] fails.

use std::time::Instant;

use nalgebra::Rotation3;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use trinormal::cloud::{add_gaussian_noise, generate_shape, NoiseSpec};
use trinormal::eval::{msae, pca_baseline_normals, run_evaluation, EvalSpec, Method, Model, Models};
use trinormal::geom::{unoriented_angle_rad, Vec3};
use trinormal::loss::{normal_loss, triplet_loss, weight_fn, SupportAngle, TripletMargin};
use trinormal::nn::{estimator_digest, weights_digest, EncoderNet, EstimatorNet, MlpGrads, PlateauScheduler};
use trinormal::patch::{align_patch, center_and_scale, extract_patch, pca_rotation, PatchConfig};
use trinormal::train::{build_dataset, train_pipeline, Pipeline, Profile, RunConfig};
use trinormal::triplet::{sample_triplets, TripletConfig};
use trinormal::{seed, PointCloud, ShapeKind, SpatialIndex};

/// Reported only.
const NON_GATING: [usize; 1] = [8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_patch<R: Rng>(rng: &mut R, k: usize) -> Array2<f64> {
    let normal = random_unit(rng);
    let u = normal.cross(&random_unit(rng)).normalize();
    let v = normal.cross(&u);
    let bend = rng.random_range(-0.5..0.5);
    let mut out = Array2::zeros((k, 3));
    for mut row in out.rows_mut() {
        let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let p = u * a + v * b + normal * (bend * a * b + 0.01 * rng.random_range(-1.0..1.0));
        row.assign(&ndarray::arr1(&[p.x, p.y, p.z]));
    }
    out
}

// ---------------------------------------------------------------- 1

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const MIN_RESOLVABLE_GRAD: f64 = 1e-6;

fn perturbed(mlp: &trinormal::nn::Mlp, i: usize, h: f64) -> trinormal::nn::Mlp {
    let mut m = mlp.clone();
    *m.param_mut(i) += h;
    m
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

fn gradient_oracle() -> Outcome {
    let mut rng = seed::rng(101);
    let sigma = SupportAngle::default();
    // Large margin keeps the hinge active for random patches.
    let margin = TripletMargin::new(1e3).unwrap();
    let (mut draws, mut worst) = (0usize, 0.0f64);
    let mut failures = Vec::new();
    for draw in 0..60u64 {
        let enc = EncoderNet::init(1000 + draw);
        let mut est = EstimatorNet::init(2000 + draw);
        let k = 32;
        let (pa, ps, pt) = (
            random_patch(&mut rng, k),
            random_patch(&mut rng, k),
            random_patch(&mut rng, k),
        );
        let za = enc.encode(pa.view()).unwrap();
        est.fit_input_offset(za.view().insert_axis(Axis(0))).unwrap();
        est.input_offset.mapv_inplace(|v| v * rng.random_range(0.9..1.1));
        let normals: Vec<Vec3> = (0..k)
            .map(|_| (Vec3::z() + 0.3 * random_unit(&mut rng)).normalize())
            .collect();
        let center = normals[0];

        let triplet_obj = |e: &EncoderNet| {
            let (a, s, t) = (
                e.encode(pa.view()).unwrap(),
                e.encode(ps.view()).unwrap(),
                e.encode(pt.view()).unwrap(),
            );
            triplet_loss(a.view(), s.view(), t.view(), margin).value
        };
        let normal_obj = |e: &EncoderNet, s: &EstimatorNet| {
            let n = s.predict(e.encode(pa.view()).unwrap().view()).unwrap();
            normal_loss(n.as_vec(), &normals, &center, sigma).unwrap().value
        };

        // Analytic gradients.
        let (ca, cs, ct) = (
            enc.forward(pa.view()).unwrap(),
            enc.forward(ps.view()).unwrap(),
            enc.forward(pt.view()).unwrap(),
        );
        let tl = triplet_loss(ca.latent.view(), cs.latent.view(), ct.latent.view(), margin);
        let mut g_trip = MlpGrads::zeros_like(&enc.mlp);
        enc.backward(&ca, tl.d_anchor.view(), &mut g_trip);
        enc.backward(&cs, tl.d_positive.view(), &mut g_trip);
        enc.backward(&ct, tl.d_negative.view(), &mut g_trip);
        let g_trip = g_trip.flatten();

        let sc = est.forward(ca.latent.view().insert_axis(Axis(0))).unwrap();
        let o = sc.output.row(0);
        let nl = normal_loss(&Vec3::new(o[0], o[1], o[2]), &normals, &center, sigma).unwrap();
        let d_unit = Array2::from_shape_vec((1, 3), vec![nl.d_pred.x, nl.d_pred.y, nl.d_pred.z]).unwrap();
        let mut g_norm_est = MlpGrads::zeros_like(&est.mlp);
        let mut g_norm_enc = MlpGrads::zeros_like(&enc.mlp);
        let d_latent = est.backward(&sc, &d_unit, &mut g_norm_est, true).unwrap();
        enc.backward(&ca, d_latent.row(0), &mut g_norm_enc);
        let (g_norm_est, g_norm_enc) = (g_norm_est.flatten(), g_norm_enc.flatten());

        // One encoder parameter for the triplet loss, one encoder and one
        // estimator parameter for the normal loss, among those whose gradient lies above the
        // round-off floor of a 1e-5 central difference.
        let pick = |g: &[f64], rng: &mut rand_chacha::ChaCha8Rng| {
            let live: Vec<usize> = (0..g.len()).filter(|&i| g[i].abs() > MIN_RESOLVABLE_GRAD).collect();
            live[rng.random_range(0..live.len())]
        };
        let checks: [(&str, f64, f64); 3] = {
            let i = pick(&g_trip, &mut rng);
            let n_trip = (triplet_obj(&EncoderNet::from_mlp(perturbed(&enc.mlp, i, FD_STEP)).unwrap())
                - triplet_obj(&EncoderNet::from_mlp(perturbed(&enc.mlp, i, -FD_STEP)).unwrap()))
                / (2.0 * FD_STEP);
            let j = pick(&g_norm_enc, &mut rng);
            let n_norm_enc = (normal_obj(&EncoderNet::from_mlp(perturbed(&enc.mlp, j, FD_STEP)).unwrap(), &est)
                - normal_obj(&EncoderNet::from_mlp(perturbed(&enc.mlp, j, -FD_STEP)).unwrap(), &est))
                / (2.0 * FD_STEP);
            let l = pick(&g_norm_est, &mut rng);
            let mut sp = est.clone();
            sp.mlp = perturbed(&est.mlp, l, FD_STEP);
            let mut sm = est.clone();
            sm.mlp = perturbed(&est.mlp, l, -FD_STEP);
            let n_norm_est = (normal_obj(&enc, &sp) - normal_obj(&enc, &sm)) / (2.0 * FD_STEP);
            [
                ("triplet/encoder", g_trip[i], n_trip),
                ("normal/encoder", g_norm_enc[j], n_norm_enc),
                ("normal/estimator", g_norm_est[l], n_norm_est),
            ]
        };
        for (name, a, n) in checks {
            let e = rel_err(a, n);
            draws += 1;
            if e >= FD_REL_TOL {
                failures.push(format!("{name} draw {draw}: analytic {a:.6e} numeric {n:.6e}"));
            }
            worst = worst.max(e);
        }
    }
    outcome(
        failures.is_empty() && draws >= 50,
        format!(
            "{draws} draws, worst relative error {worst:.2e} {}",
            failures.join("; ")
        ),
    )
}

// ---------------------------------------------------------------- 2

fn permutation_invariance() -> Outcome {
    let enc = EncoderNet::init(7);
    let mut rng = seed::rng(202);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let k = rng.random_range(3..80);
        let p = random_patch(&mut rng, k);
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let q = p.select(Axis(0), &order);
        let (a, b) = (enc.encode(p.view()).unwrap(), enc.encode(q.view()).unwrap());
        if a.iter().zip(b.iter()).any(|(x, y)| x.to_bits() != y.to_bits()) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("1000 pairs, {mismatches} latent mismatches"))
}

// ---------------------------------------------------------------- 3

fn spatial_oracle() -> Outcome {
    let mut rng = seed::rng(303);
    let mut bad = 0;
    let mut queries = 0;
    for c in 0..100 {
        let n = rng.random_range(1..=1000);
        // Every fourth cloud is on a coarse grid to force ties and duplicates.
        let pts: Vec<Vec3> = (0..n)
            .map(|_| {
                if c % 4 == 0 {
                    Vec3::new(
                        f64::from(rng.random_range(-5..5)) * 0.1,
                        f64::from(rng.random_range(-5..5)) * 0.1,
                        f64::from(rng.random_range(-5..5)) * 0.1,
                    )
                } else {
                    Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                }
            })
            .collect();
        let cloud = PointCloud::new(pts.clone(), None, "q").unwrap();
        let index = SpatialIndex::build(&cloud);
        for _ in 0..10 {
            let q = if rng.random_bool(0.5) {
                pts[rng.random_range(0..n)]
            } else {
                Vec3::new(
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.2..1.2),
                )
            };
            let r = rng.random_range(0.01..0.8);
            let ball: Vec<usize> = (0..n).filter(|&i| (pts[i] - q).norm_squared() < r * r).collect();
            let k = rng.random_range(1..=n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                (pts[a] - q)
                    .norm_squared()
                    .total_cmp(&(pts[b] - q).norm_squared())
                    .then(a.cmp(&b))
            });
            order.truncate(k);
            queries += 2;
            bad += usize::from(index.ball_query(&q, r) != ball);
            bad += usize::from(index.knn_query(&q, k).unwrap() != order);
        }
    }
    outcome(bad == 0, format!("100 clouds, {queries} queries, {bad} mismatches"))
}

// ---------------------------------------------------------------- 4

fn alignment_properties() -> Outcome {
    let mut rng = seed::rng(404);
    let shapes = [
        ShapeKind::Cube,
        ShapeKind::Tetrahedron,
        ShapeKind::Cylinder,
        ShapeKind::Sphere,
    ];
    let clouds: Vec<PointCloud> = shapes
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let c = generate_shape(s, 3000, i as u64 + 1).unwrap();
            add_gaussian_noise(&c, NoiseSpec { level: 0.003, seed: 9 }).unwrap()
        })
        .collect();
    let (mut worst_orth, mut worst_offdiag, mut order_bad, mut rigid_bad, mut done) = (0.0f64, 0.0f64, 0, 0, 0);
    while done < 200 {
        let cloud = &clouds[done % clouds.len()];
        let center = rng.random_range(0..cloud.len());
        let radius = rng.random_range(0.03..0.08) * cloud.bbox_diagonal();
        let index = SpatialIndex::build(cloud);
        let Ok(raw) = extract_patch(&index, cloud, center, radius) else {
            continue;
        };
        let local = center_and_scale(&raw);
        let Ok(rot) = pca_rotation(&local) else {
            continue;
        };
        done += 1;
        worst_orth = worst_orth.max(rot.orthonormality_error());
        let rotated: Vec<Vec3> = local.iter().map(|p| rot.apply(p)).collect();
        let mean = rotated.iter().sum::<Vec3>() / rotated.len() as f64;
        let mut cov = nalgebra::Matrix3::zeros();
        for p in &rotated {
            let d = p - mean;
            cov += d * d.transpose();
        }
        cov /= rotated.len() as f64;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            worst_offdiag = worst_offdiag.max(cov[(i, j)].abs());
        }
        if !(cov[(1, 1)] >= cov[(0, 0)] && cov[(0, 0)] >= cov[(2, 2)]) {
            order_bad += 1;
        }

        // Rigid motion of the whole cloud, same radius.
        let r = Rotation3::from_euler_angles(
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.0..3.0),
        );
        let t = Vec3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        let moved = cloud.map_points(|p| r * p + t).unwrap();
        let moved_index = SpatialIndex::build(&moved);
        let Ok(raw_m) = extract_patch(&moved_index, &moved, center, radius) else {
            rigid_bad += 1;
            continue;
        };
        let k = raw.points.len();
        let (Ok(a), Ok(b)) = (align_patch(&raw, k, 1, "a"), align_patch(&raw_m, k, 1, "b")) else {
            rigid_bad += 1;
            continue;
        };
        let mut sa = a.source_indices.clone();
        let mut sb = b.source_indices.clone();
        sa.sort_unstable();
        sb.sort_unstable();
        if sa != sb {
            rigid_bad += 1;
            continue;
        }
        let mut signs = [0.0f64; 3];
        let mut ok = true;
        for (ra, &src) in a.source_indices.iter().enumerate() {
            let rb = b.source_indices.iter().position(|&s| s == src).unwrap();
            for ax in 0..3 {
                let (u, v) = (a.points[[ra, ax]], b.points[[rb, ax]]);
                if (u.abs() - v.abs()).abs() > 1e-6 {
                    ok = false;
                }
                if u.abs() > 1e-3 {
                    let s = (v / u).signum();
                    if signs[ax] == 0.0 {
                        signs[ax] = s;
                    } else if signs[ax] != s {
                        ok = false;
                    }
                }
            }
        }
        rigid_bad += usize::from(!ok);
    }
    outcome(
        worst_orth < 1e-9 && worst_offdiag < 1e-9 && order_bad == 0 && rigid_bad == 0,
        format!(
            "200 patches, orthonormality {worst_orth:.1e}, off-diagonal {worst_offdiag:.1e}, \
             {order_bad} ordering violations, {rigid_bad} rigid-motion violations"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn triplet_validity() -> Outcome {
    let clean = generate_shape(ShapeKind::Cube, 2000, 5).unwrap();
    let noisy = add_gaussian_noise(&clean, NoiseSpec { level: 0.005, seed: 6 }).unwrap();
    let tc = TripletConfig {
        seed: 55,
        ..TripletConfig::default()
    };
    let pc = PatchConfig {
        k: 32,
        r_fraction: 0.05,
        seed: 8,
    };
    let (mut total, mut bad) = (0, 0);
    for cloud in [&clean, &noisy] {
        let index = SpatialIndex::build(cloud);
        let gt = cloud.require_normals().unwrap();
        let pts = cloud.points();
        let sample = sample_triplets(cloud, &index, 400, &pc, &tc).unwrap();
        let radius = pc.radius_for(cloud);
        let cap = radius * tc.max_search_factor;
        for t in &sample.triplets {
            total += 1;
            let a = t.anchor.center_index;
            let angle = |i: usize| unoriented_angle_rad(gt[a].as_vec(), gt[i].as_vec()).to_degrees();
            let nearest = |pred: &dyn Fn(f64) -> bool| {
                (0..pts.len())
                    .filter(|&i| i != a && (pts[i] - pts[a]).norm() < cap && pred(angle(i)))
                    .min_by(|&x, &y| {
                        (pts[x] - pts[a])
                            .norm_squared()
                            .total_cmp(&(pts[y] - pts[a]).norm_squared())
                            .then(x.cmp(&y))
                    })
            };
            let (p, n) = (t.positive.center_index, t.negative.center_index);
            let ok = angle(p) <= tc.theta_th
                && angle(n) > tc.theta_th
                && nearest(&|d| d <= tc.theta_th) == Some(p)
                && nearest(&|d| d > tc.theta_th) == Some(n);
            bad += usize::from(!ok);
        }
    }
    outcome(
        total > 0 && bad == 0,
        format!("{total} triplets checked, {bad} invalid"),
    )
}

// ---------------------------------------------------------------- 6

fn loss_values() -> Outcome {
    let sigma = SupportAngle::default();
    let s = sigma.degrees().to_radians();
    let w = weight_fn(&Vec3::z(), &Vec3::new(s.sin(), 0.0, s.cos()), sigma);
    let w_same = weight_fn(&Vec3::z(), &Vec3::z(), sigma);
    let arr = |v: &[f64]| ndarray::Array1::from(v.to_vec());
    let m0 = TripletMargin::default();
    let active = triplet_loss(
        arr(&[0.0, 0.0]).view(),
        arr(&[3.0, 4.0]).view(),
        arr(&[0.0, 1.0]).view(),
        m0,
    );
    let inactive = triplet_loss(
        arr(&[0.0, 0.0]).view(),
        arr(&[1.0, 0.0]).view(),
        arr(&[0.0, 2.0]).view(),
        TripletMargin::new(0.5).unwrap(),
    );
    let unit_gap = triplet_loss(
        arr(&[0.0, 0.0]).view(),
        arr(&[2.0, 0.0]).view(),
        arr(&[0.0, 1.0]).view(),
        m0,
    );
    let kink = triplet_loss(
        arr(&[0.0, 0.0]).view(),
        arr(&[1.0, 0.0]).view(),
        arr(&[0.0, 2.0]).view(),
        TripletMargin::new(1.0).unwrap(),
    );
    let tagged = (w - (-1.0f64).exp()).abs() < 1e-12
        && w_same == 1.0
        && active.value == 4.0
        && inactive.value == 0.0
        && inactive.d_anchor.iter().all(|&g| g == 0.0)
        && unit_gap.value == 1.0
        && kink.value == 0.0
        && kink.d_anchor.iter().all(|&g| g == 0.0);

    let mut rng = seed::rng(606);
    let mut bad = 0;
    for _ in 0..10_000 {
        let pred = random_unit(&mut rng);
        let center = random_unit(&mut rng);
        let ns: Vec<Vec3> = (0..rng.random_range(1..30)).map(|_| random_unit(&mut rng)).collect();
        let a = normal_loss(&pred, &ns, &center, sigma).unwrap().value;
        let b = normal_loss(&(-pred), &ns, &center, sigma).unwrap().value;
        if !(0.0..=1.0).contains(&a) || a != b {
            bad += 1;
        }
    }
    outcome(
        tagged && bad == 0,
        format!(
            "weight at support angle {w:.6}, hinge cases {}, 10000 draws with {bad} violations",
            if tagged { "exact" } else { "WRONG" }
        ),
    )
}

// ---------------------------------------------------------------- 9

fn pca_sanity() -> Outcome {
    let mut worst_plane = 0.0f64;
    for s in 0..5 {
        let plane = generate_shape(ShapeKind::Plane, 2000, 40 + s).unwrap();
        let est = pca_baseline_normals(&plane, 20).unwrap();
        for n in &est.normals {
            let v = n.as_vec();
            worst_plane = worst_plane.max(v.x.abs()).max(v.y.abs()).max((v.z.abs() - 1.0).abs());
        }
    }
    let sphere = generate_shape(ShapeKind::Sphere, 10_000, 41).unwrap();
    let est = pca_baseline_normals(&sphere, 20).unwrap();
    let err = msae(&est.normals, sphere.require_normals().unwrap()).unwrap();
    outcome(
        worst_plane <= f64::EPSILON && err < 1e-3,
        format!("plane deviation from +-z {worst_plane:.1e}, sphere MSAE {err:.2e} rad^2"),
    )
}

// ---------------------------------------------------------------- 10

fn plateau_schedule() -> Outcome {
    let mut s = PlateauScheduler::new(0.01, 0.1, 3);
    let stagnant: Vec<f64> = [1.0, 1.0, 1.0, 1.0].iter().map(|&m| s.update(m)).collect();
    let mut s2 = PlateauScheduler::new(0.01, 0.1, 3);
    let steady: Vec<f64> = (0..20).map(|i| s2.update(1.0 / f64::from(i + 1))).collect();
    let mut s3 = PlateauScheduler::new(0.01, 0.1, 3);
    let late: Vec<f64> = [1.0, 0.9, 0.95, 0.92, 0.91, 0.8, 0.8]
        .iter()
        .map(|&m| s3.update(m))
        .collect();
    let ok = stagnant == [0.01, 0.01, 0.01, 0.001]
        && steady.iter().all(|&lr| lr == 0.01)
        && late[..4] == [0.01, 0.01, 0.01, 0.01]
        && late[4] == 0.001
        && late[5..] == [0.001, 0.001];
    outcome(
        ok,
        format!("stagnant {stagnant:?}, improving run constant at {}", steady[19]),
    )
}

// ---------------------------------------------------------------- 7, 8, 11

struct Run {
    cfg: RunConfig,
    pipeline: Pipeline,
    held_out: PointCloud,
}

fn train_run(seed: u64, no_encoder: bool) -> Run {
    let mut cfg = RunConfig::profile(Profile::Toy, seed);
    cfg.train.ablation_no_encoder = no_encoder;
    let t = Instant::now();
    let data = build_dataset(&cfg.dataset_spec()).unwrap();
    let pipeline = train_pipeline(&data.train, &data.validation, &cfg.train, cfg.hash()).unwrap();
    eprintln!(
        "  trained seed {seed}{} in {:.0}s",
        if no_encoder { " (no encoder)" } else { "" },
        t.elapsed().as_secs_f64()
    );
    let v = &cfg.dataset_spec().validation_shapes[0];
    let held_out = generate_shape(v.kind, v.n_points, v.seed)
        .unwrap()
        .with_name(v.name.clone());
    Run {
        cfg,
        pipeline,
        held_out,
    }
}

fn held_out_msae(run: &Run, model: Model, level: f64) -> f64 {
    let spec = EvalSpec {
        noise_levels: vec![level],
        methods: vec![Method::Ours],
        patch: run.cfg.patch_config(),
        pca_k: 20,
        seed: run.cfg.seed,
        config_hash: run.cfg.hash(),
    };
    let models = Models {
        ours: Some(model),
        no_encoder: None,
    };
    run_evaluation(std::slice::from_ref(&run.held_out), &models, &spec).unwrap()[0].msae
}

fn model_of(p: &Pipeline) -> Model {
    Model {
        encoder: p.encoder.clone(),
        estimator: p.estimator.clone(),
    }
}

fn main() {
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().unwrap();
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, o: Outcome| {
        println!(
            "{} criterion {n:>2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };

    record(1, "gradient oracle", gradient_oracle());
    record(2, "permutation invariance", permutation_invariance());
    record(3, "spatial queries", spatial_oracle());
    record(4, "alignment", alignment_properties());
    record(5, "triplet validity", triplet_validity());
    record(6, "loss values", loss_values());

    // 7: toy training, seed 1.
    let base = train_run(1, false);
    let hist: Vec<f64> = base.pipeline.encoder_history.iter().map(|r| r.train_loss).collect();
    let monotone = hist.windows(2).all(|w| w[1] < w[0]);
    let quarter = hist.last().unwrap() < &(0.25 * hist[0]);
    let trained = held_out_msae(&base, model_of(&base.pipeline), 0.0);
    let random = held_out_msae(
        &base,
        Model {
            encoder: EncoderNet::init(seed::derive(1, &[seed::tag("random-encoder")])),
            estimator: EstimatorNet::init(seed::derive(1, &[seed::tag("random-estimator")])),
        },
        0.0,
    );
    let loss_str = hist.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>().join(" > ");
    record(
        7,
        "toy training (a) encoder loss",
        outcome(monotone || quarter, format!("epoch losses {loss_str}")),
    );
    record(
        7,
        "toy training (b) vs random",
        outcome(
            random >= 5.0 * trained,
            format!(
                "trained {trained:.4} vs random {random:.4} rad^2 ({:.1}x)",
                random / trained
            ),
        ),
    );
    record(
        7,
        "toy training (c) clean cube",
        outcome(trained < 0.05, format!("held-out clean cube MSAE {trained:.4} rad^2")),
    );

    // 8: encoder ablation over five seeds.
    let mut wins = 0;
    let mut rows = Vec::new();
    for s in 1..=5u64 {
        let pre = if s == 1 {
            held_out_msae(&base, model_of(&base.pipeline), 0.005)
        } else {
            let r = train_run(s, false);
            held_out_msae(&r, model_of(&r.pipeline), 0.005)
        };
        let ab = train_run(s, true);
        let no_enc = held_out_msae(&ab, model_of(&ab.pipeline), 0.005);
        wins += usize::from(pre < no_enc);
        rows.push(format!("seed {s}: {pre:.4} vs {no_enc:.4}"));
        eprintln!("  {}", rows.last().unwrap());
    }
    record(
        8,
        "encoder ablation",
        outcome(
            wins >= 3,
            format!("pretrained better in {wins}/5 seeds ({})", rows.join(", ")),
        ),
    );

    record(9, "PCA baseline", pca_sanity());
    record(10, "plateau schedule", plateau_schedule());

    // 11: rerun criterion 7 and compare.
    let again = train_run(1, false);
    let same_weights = weights_digest(&again.pipeline.encoder.mlp) == weights_digest(&base.pipeline.encoder.mlp)
        && estimator_digest(&again.pipeline.estimator) == estimator_digest(&base.pipeline.estimator);
    let again_msae = held_out_msae(&again, model_of(&again.pipeline), 0.0);
    record(
        11,
        "determinism",
        outcome(
            same_weights && again_msae.to_bits() == trained.to_bits(),
            format!(
                "weights {}, MSAE {trained:.6} vs {again_msae:.6}",
                if same_weights { "identical" } else { "differ" }
            ),
        ),
    );

    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.2.pass)
        .map(|r| format!("{} ({})", r.0, r.1))
        .collect();
    println!(
        "{} of {} checks passed in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
    }
    if results.iter().any(|r| !r.2.pass && !NON_GATING.contains(&r.0)) {
        std::process::exit(1);
    }
}
