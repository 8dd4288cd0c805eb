//! `trinormal`: command-line driver for shape generation, training,
//! estimation, evaluation and ablations.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trinormal::ablation::{ablate_exponent, exponent_reports_to_csv, AblationInputs, DEFAULT_EXPONENTS};
use trinormal::cloud::{add_gaussian_noise, generate_shape, load_cloud, save_cloud, CloudFormat, NoiseSpec};
use trinormal::eval::{
    estimate_normals, patch_size_sweep, reports_to_csv, reports_to_table, run_evaluation, EvalReport, EvalSpec, Method,
    Model, Models, DEFAULT_PATCH_SIZES, PCA_BASELINE_K,
};
use trinormal::nn::{
    load_estimator as read_estimator, load_weights, save_estimator, save_weights, EncoderNet, EstimatorNet,
};
use trinormal::train::{
    build_dataset, write_history_csv, Checkpoint, Datasets, EpochRecord, Profile, RunConfig, Trainer,
};
use trinormal::{seed, Error, PointCloud, ShapeKind};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "trinormal",
    version,
    about = "Point cloud normal estimation with a triplet-trained patch encoder"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalOpts {
    /// Base seed; every random choice is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Parameter preset.
    #[arg(long, global = true, default_value = "toy")]
    profile: Profile,

    /// Worker threads (1 = bit-reproducible single-threaded mode, 0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Flat `key = value` config file applied on top of the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Config override `key=value`, applied after --config (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic shape with analytic normals.
    Generate {
        #[arg(long)]
        kind: ShapeKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add Gaussian noise (fraction of the bounding-box diagonal) to a cloud.
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        level: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the patch encoder with the triplet loss.
    TrainEncoder {
        /// Encoder weight file to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Train the normal estimator on a frozen encoder (or jointly with --no-encoder).
    TrainEstimator {
        /// Frozen encoder weights (required unless --no-encoder).
        #[arg(long, required_unless_present = "no_encoder")]
        encoder: Option<PathBuf>,
        /// Estimator weight file to write.
        #[arg(long)]
        out: PathBuf,
        /// Train encoder and estimator jointly from scratch.
        #[arg(long)]
        no_encoder: bool,
        /// Where to write the jointly trained encoder in --no-encoder mode.
        #[arg(long, requires = "no_encoder")]
        out_encoder: Option<PathBuf>,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Estimate normals for every point of a cloud and write them as xyzn.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model_encoder: PathBuf,
        #[arg(long)]
        model_estimator: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score methods against ground-truth normals.
    Evaluate {
        /// Comma-separated subset of ours, ours-no-encoder, pca-baseline.
        #[arg(long, value_delimiter = ',', default_value = "ours,ours-no-encoder,pca-baseline")]
        methods: Vec<Method>,
        /// Clouds with ground-truth normals (xyzn or ply).
        #[arg(long, value_delimiter = ',', required = true)]
        shapes: Vec<PathBuf>,
        /// Noise levels added before estimation.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        noise: Vec<f64>,
        #[arg(long)]
        model_encoder: Option<PathBuf>,
        #[arg(long)]
        model_estimator: Option<PathBuf>,
        #[arg(long)]
        noenc_encoder: Option<PathBuf>,
        #[arg(long)]
        noenc_estimator: Option<PathBuf>,
        /// Neighborhood size of the PCA baseline.
        #[arg(long, default_value_t = PCA_BASELINE_K)]
        pca_k: usize,
        /// Write the CSV here and print a table instead.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrain the estimator per loss exponent on one frozen encoder.
    AblateExponent {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EXPONENTS)]
        exponents: Vec<u32>,
        /// Held-out clouds with ground truth; defaults to the profile's validation shapes.
        #[arg(long, value_delimiter = ',')]
        shapes: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate one pipeline per patch size.
    AblatePatchSize {
        /// Comma-separated `r_fraction:k` pairs; defaults to the six standard sizes.
        #[arg(long, value_delimiter = ',', value_parser = parse_size)]
        sizes: Vec<(f64, usize)>,
        /// Held-out clouds with ground truth; defaults to the profile's validation shapes.
        #[arg(long, value_delimiter = ',')]
        shapes: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunOpts {
    /// Per-epoch loss history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Checkpoint file rewritten after every epoch.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many epochs in this invocation (resume later).
    #[arg(long)]
    max_epochs: Option<usize>,
}

fn parse_size(s: &str) -> Result<(f64, usize), String> {
    let (r, k) = s
        .split_once(':')
        .ok_or_else(|| format!("expected r_fraction:k, got '{s}'"))?;
    let r = r.trim().parse().map_err(|e| format!("bad r_fraction '{r}': {e}"))?;
    let k = k.trim().parse().map_err(|e| format!("bad k '{k}': {e}"))?;
    Ok((r, k))
}

/// A failure carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            e if e.is_numeric() => EXIT_NUMERIC,
            Error::InvalidArgument(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure { code, error: e.into() }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        error: anyhow::anyhow!(msg.into()),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.global.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.threads)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run_config(g: &GlobalOpts) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::profile(g.profile, g.seed);
    if let Some(path) = &g.config {
        cfg.apply_file(path)?;
    }
    for kv in &g.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    // The command-line seed wins over any seed in the config file.
    cfg.set_seed(g.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn format_of(path: &Path) -> CliResult<CloudFormat> {
    CloudFormat::from_path(path).ok_or_else(|| {
        usage(format!(
            "{}: unknown extension (use .xyz, .xyzn or .ply)",
            path.display()
        ))
    })
}

fn read_cloud(path: &Path) -> CliResult<PointCloud> {
    Ok(load_cloud(path, format_of(path)?)?)
}

fn write_cloud(cloud: &PointCloud, path: &Path) -> CliResult {
    Ok(save_cloud(cloud, path, format_of(path)?)?)
}

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_DATA,
            error: anyhow::anyhow!("{}: no such file", path.display()),
        })
    }
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| Failure {
        code: EXIT_DATA,
        error: anyhow::anyhow!("cannot write {}: {e}", path.display()),
    })
}

fn load_encoder(path: &Path) -> CliResult<EncoderNet> {
    require_file(path)?;
    Ok(EncoderNet::from_mlp(load_weights(path)?)?)
}

fn load_estimator(path: &Path) -> CliResult<EstimatorNet> {
    require_file(path)?;
    Ok(read_estimator(path)?)
}

fn run(cli: &Cli) -> CliResult {
    let g = &cli.global;
    match &cli.command {
        Command::Generate { kind, n, out } => {
            format_of(out)?;
            let cloud = generate_shape(*kind, *n, g.seed)?;
            write_cloud(&cloud, out)
        }
        Command::Corrupt { input, level, out } => {
            format_of(out)?;
            let cloud = read_cloud(input)?;
            let spec = NoiseSpec {
                level: *level,
                seed: seed::derive(g.seed, &[seed::tag("corrupt")]),
            };
            write_cloud(&add_gaussian_noise(&cloud, spec)?, out)
        }
        Command::TrainEncoder { out, run } => {
            let cfg = run_config(g)?;
            check_resume(run)?;
            let data = build(&cfg)?;
            let hash = cfg.hash();
            let mut trainer = match &run.resume {
                Some(p) => Trainer::resume(Checkpoint::load(p)?, &data.train, &data.validation, &cfg.train, hash)?,
                None => Trainer::encoder_phase(&data.train, &data.validation, &cfg.train, hash)?,
            };
            if drive(&mut trainer, run)? {
                save_weights(&trainer.encoder().mlp, out)?;
            }
            Ok(())
        }
        Command::TrainEstimator {
            encoder,
            out,
            no_encoder,
            out_encoder,
            run,
        } => {
            let mut cfg = run_config(g)?;
            cfg.train.ablation_no_encoder = *no_encoder;
            check_resume(run)?;
            let frozen = match (no_encoder, encoder) {
                (false, Some(p)) => Some(load_encoder(p)?),
                (false, None) => return Err(usage("--encoder is required unless --no-encoder is given")),
                (true, _) => None,
            };
            let data = build(&cfg)?;
            let hash = cfg.hash();
            let mut trainer = match (&run.resume, &frozen) {
                (Some(p), _) => Trainer::resume(Checkpoint::load(p)?, &data.train, &data.validation, &cfg.train, hash)?,
                (None, Some(enc)) => Trainer::estimator_phase(&data.train, &data.validation, enc, &cfg.train, hash)?,
                (None, None) => Trainer::joint_phase(&data.train, &data.validation, &cfg.train, hash)?,
            };
            if drive(&mut trainer, run)? {
                let est = trainer.estimator().expect("estimator phases carry an estimator");
                save_estimator(est, out)?;
                if let Some(p) = out_encoder {
                    save_weights(&trainer.encoder().mlp, p)?;
                }
            }
            Ok(())
        }
        Command::Estimate {
            input,
            model_encoder,
            model_estimator,
            out,
        } => {
            format_of(out)?;
            let cfg = run_config(g)?;
            let encoder = load_encoder(model_encoder)?;
            let estimator = load_estimator(model_estimator)?;
            let cloud = read_cloud(input)?;
            let est = estimate_normals(&cloud, &encoder, &estimator, &cfg.patch_config())?;
            if est.degenerate_count() > 0 {
                eprintln!("{} point(s) used the PCA fallback", est.degenerate_count());
            }
            let with = cloud.with_normals(Some(est.normals))?;
            write_cloud(&with, out)
        }
        Command::Evaluate {
            methods,
            shapes,
            noise,
            model_encoder,
            model_estimator,
            noenc_encoder,
            noenc_estimator,
            pca_k,
            out,
        } => {
            let cfg = run_config(g)?;
            let models = Models {
                ours: pair(
                    methods,
                    Method::Ours,
                    model_encoder,
                    model_estimator,
                    "--model-encoder/--model-estimator",
                )?,
                no_encoder: pair(
                    methods,
                    Method::OursNoEncoder,
                    noenc_encoder,
                    noenc_estimator,
                    "--noenc-encoder/--noenc-estimator",
                )?,
            };
            let clouds = shapes.iter().map(|p| read_cloud(p)).collect::<CliResult<Vec<_>>>()?;
            let spec = EvalSpec {
                noise_levels: noise.clone(),
                methods: methods.clone(),
                patch: cfg.patch_config(),
                pca_k: *pca_k,
                seed: g.seed,
                config_hash: cfg.hash(),
            };
            let reports = run_evaluation(&clouds, &models, &spec)?;
            emit_reports(&reports, out.as_deref())
        }
        Command::AblateExponent {
            encoder,
            exponents,
            shapes,
            out,
        } => {
            let cfg = run_config(g)?;
            let enc = load_encoder(encoder)?;
            let clouds = held_out(&cfg, shapes)?;
            let data = build(&cfg)?;
            let inputs = AblationInputs {
                train: &data.train,
                validation: &data.validation,
                encoder: &enc,
                shapes: &clouds,
                patch: cfg.patch_config(),
                seed: g.seed,
                config_hash: cfg.hash(),
            };
            let reports = ablate_exponent(inputs, exponents, &cfg.train)?;
            let csv = exponent_reports_to_csv(&reports);
            match out {
                Some(p) => {
                    write_text(p, &csv)?;
                    for r in &reports {
                        println!(
                            "exponent {:>2}  {:<12} msae {:.6}",
                            r.exponent, r.report.shape, r.report.msae
                        );
                    }
                }
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::AblatePatchSize { sizes, shapes, out } => {
            let cfg = run_config(g)?;
            let sizes = if sizes.is_empty() {
                DEFAULT_PATCH_SIZES.to_vec()
            } else {
                sizes.clone()
            };
            let clouds = held_out(&cfg, shapes)?;
            let reports = patch_size_sweep(&clouds, &sizes, &cfg)?;
            emit_reports(&reports, out.as_deref())
        }
    }
}

fn check_resume(run: &RunOpts) -> CliResult {
    if let Some(p) = &run.resume {
        require_file(p)?;
    }
    if run.max_epochs == Some(0) {
        return Err(usage("--max-epochs must be at least 1"));
    }
    Ok(())
}

fn build(cfg: &RunConfig) -> CliResult<Datasets> {
    let data = build_dataset(&cfg.dataset_spec())?;
    log::info!(
        "corpus: {} triplets, {} labeled patches; validation: {} triplets, {} labeled",
        data.train.triplets.len(),
        data.train.labeled.len(),
        data.validation.triplets.len(),
        data.validation.labeled.len()
    );
    Ok(data)
}

/// Run epochs until the phase finishes or `--max-epochs` is reached; returns
/// whether the phase finished.
fn drive(trainer: &mut Trainer<'_>, run: &RunOpts) -> CliResult<bool> {
    let mut done = 0;
    while !trainer.is_finished() && run.max_epochs.is_none_or(|m| done < m) {
        let rec = trainer.run_epoch()?;
        print_epoch(&rec);
        done += 1;
        if let Some(p) = &run.checkpoint {
            trainer.checkpoint().save(p)?;
        }
    }
    if let Some(p) = &run.history {
        write_history_csv(trainer.history(), p)?;
    }
    Ok(trainer.is_finished())
}

fn print_epoch(r: &EpochRecord) {
    eprintln!(
        "epoch {:>3}  train {:.6}  val {:.6}  lr {}",
        r.epoch, r.train_loss, r.val_loss, r.lr
    );
}

fn pair(
    methods: &[Method],
    method: Method,
    encoder: &Option<PathBuf>,
    estimator: &Option<PathBuf>,
    flags: &str,
) -> CliResult<Option<Model>> {
    if !methods.contains(&method) {
        return Ok(None);
    }
    match (encoder, estimator) {
        (Some(e), Some(s)) => Ok(Some(Model {
            encoder: load_encoder(e)?,
            estimator: load_estimator(s)?,
        })),
        _ => Err(usage(format!("method '{method}' needs {flags}"))),
    }
}

/// Clouds from `paths`, or the profile's clean validation shapes.
fn held_out(cfg: &RunConfig, paths: &[PathBuf]) -> CliResult<Vec<PointCloud>> {
    if !paths.is_empty() {
        return paths.iter().map(|p| read_cloud(p)).collect();
    }
    cfg.dataset_spec()
        .validation_shapes
        .iter()
        .map(|s| Ok(generate_shape(s.kind, s.n_points, s.seed)?.with_name(s.name.clone())))
        .collect()
}

fn emit_reports(reports: &[EvalReport], out: Option<&Path>) -> CliResult {
    let csv = reports_to_csv(reports);
    match out {
        Some(p) => {
            write_text(p, &csv)?;
            print!("{}", reports_to_table(reports));
        }
        None => print!("{csv}"),
    }
    Ok(())
}
