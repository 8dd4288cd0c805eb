use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::cloud::ShapeKind;
use crate::error::{Error, Result};
use crate::loss::{SupportAngle, TripletMargin};
use crate::patch::PatchConfig;
use crate::seed;
use crate::triplet::TripletConfig;

/// Named bundles of defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Desk scale: four shapes, three noise levels, 500 patches per shape,
    /// 64-point patches. Runs end to end in minutes on one core.
    Toy,
    /// The published protocol: 100k points per shape, six noise levels,
    /// 8000 patches per shape, 500-point patches, 5/50 epochs.
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Profile::Toy),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::InvalidArgument(format!(
                "unknown profile '{other}' (expected toy or paper)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub n_points: usize,
    pub seed: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub train_shapes: Vec<ShapeSpec>,
    /// Held out entirely from gradient updates.
    pub validation_shapes: Vec<ShapeSpec>,
    pub noise_levels: Vec<f64>,
    pub patches_per_shape: usize,
    pub validation_patches_per_shape: usize,
    pub patch: PatchConfig,
    pub triplet: TripletConfig,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_shapes.is_empty() {
            return Err(Error::InvalidArgument(
                "dataset needs at least one training shape".into(),
            ));
        }
        if self.noise_levels.is_empty() || self.noise_levels.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "invalid noise levels {:?}",
                self.noise_levels
            )));
        }
        if self.patches_per_shape == 0 {
            return Err(Error::InvalidArgument("patches_per_shape must be >= 1".into()));
        }
        self.patch.validate()?;
        self.triplet.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub encoder_epochs: usize,
    pub estimator_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub seed: u64,
    /// Train the encoder jointly from scratch on the normal loss only.
    pub ablation_no_encoder: bool,
    pub margin: TripletMargin,
    pub support_angle: SupportAngle,
    /// Cosine exponent of the normal loss.
    pub exponent: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder_epochs: 5,
            estimator_epochs: 50,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            plateau_factor: 0.1,
            plateau_patience: 3,
            seed: 0,
            ablation_no_encoder: false,
            margin: TripletMargin::default(),
            support_angle: SupportAngle::default(),
            exponent: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_epochs == 0 || self.estimator_epochs == 0 {
            return Err(Error::InvalidArgument("epoch counts must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "invalid lr {} / momentum {}",
                self.lr, self.momentum
            )));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) || self.plateau_patience == 0 {
            return Err(Error::InvalidArgument("invalid plateau schedule".into()));
        }
        if self.exponent == 0 || !self.exponent.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "exponent must be even and positive, got {}",
                self.exponent
            )));
        }
        Ok(())
    }
}

/// Everything needed to build a dataset and train on it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub shapes: Vec<ShapeKind>,
    pub validation_shapes: Vec<ShapeKind>,
    pub points_per_shape: usize,
    pub noise_levels: Vec<f64>,
    pub patches_per_shape: usize,
    pub validation_patches_per_shape: usize,
    pub k: usize,
    pub r_fraction: f64,
    pub theta_th: f64,
    pub search_growth: f64,
    pub max_search_factor: f64,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn profile(profile: Profile, seed: u64) -> Self {
        let base = RunConfig {
            profile,
            seed,
            shapes: vec![
                ShapeKind::Cube,
                ShapeKind::Tetrahedron,
                ShapeKind::Sphere,
                ShapeKind::Plane,
            ],
            validation_shapes: vec![ShapeKind::Cube],
            points_per_shape: 10_000,
            noise_levels: vec![0.0, 0.005, 0.01],
            patches_per_shape: 500,
            validation_patches_per_shape: 100,
            k: 64,
            r_fraction: 0.05,
            theta_th: 20.0,
            search_growth: 1.5,
            max_search_factor: 4.0,
            train: TrainConfig {
                encoder_epochs: 5,
                estimator_epochs: 15,
                seed,
                ..TrainConfig::default()
            },
        };
        match profile {
            Profile::Toy => RunConfig {
                points_per_shape: 20_000,
                r_fraction: 0.03,
                ..base
            },
            Profile::Paper => RunConfig {
                shapes: ShapeKind::ALL.to_vec(),
                points_per_shape: 100_000,
                noise_levels: vec![0.0, 0.0025, 0.005, 0.01, 0.015, 0.025],
                patches_per_shape: 8000,
                validation_patches_per_shape: 1000,
                k: 500,
                train: TrainConfig {
                    estimator_epochs: 50,
                    ..base.train.clone()
                },
                ..base
            },
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn patch_config(&self) -> PatchConfig {
        PatchConfig {
            k: self.k,
            r_fraction: self.r_fraction,
            seed: seed::derive(self.seed, &[seed::tag("patch")]),
        }
    }

    pub fn triplet_config(&self) -> TripletConfig {
        TripletConfig {
            theta_th: self.theta_th,
            search_growth: self.search_growth,
            max_search_factor: self.max_search_factor,
            seed: seed::derive(self.seed, &[seed::tag("triplet")]),
        }
    }

    fn shape_specs(&self, kinds: &[ShapeKind], role: &str, suffix: &str) -> Vec<ShapeSpec> {
        kinds
            .iter()
            .enumerate()
            .map(|(i, &kind)| {
                let dup = kinds[..i].iter().filter(|&&k| k == kind).count();
                let name = match dup {
                    0 => format!("{kind}{suffix}"),
                    d => format!("{kind}{suffix}{}", d + 1),
                };
                ShapeSpec {
                    kind,
                    n_points: self.points_per_shape,
                    seed: seed::derive(self.seed, &[seed::tag(role), i as u64]),
                    name,
                }
            })
            .collect()
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            train_shapes: self.shape_specs(&self.shapes, "train", ""),
            validation_shapes: self.shape_specs(&self.validation_shapes, "validation", "-val"),
            noise_levels: self.noise_levels.clone(),
            patches_per_shape: self.patches_per_shape,
            validation_patches_per_shape: self.validation_patches_per_shape,
            patch: self.patch_config(),
            triplet: self.triplet_config(),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_spec().validate()?;
        self.train.validate()
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("invalid value '{v}' for '{key}'")))
        }
        fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').map(|s| num(key, s.trim())).collect()
        }
        fn kinds(v: &str) -> Result<Vec<ShapeKind>> {
            v.split(',').map(|s| s.trim().parse()).collect()
        }
        let v = value.trim();
        match key {
            "profile" => {
                let seed = self.seed;
                *self = RunConfig::profile(v.parse()?, seed);
            }
            "seed" => self.set_seed(num(key, v)?),
            "shapes" => self.shapes = kinds(v)?,
            "validation_shapes" => self.validation_shapes = if v.is_empty() { Vec::new() } else { kinds(v)? },
            "points_per_shape" => self.points_per_shape = num(key, v)?,
            "noise_levels" => self.noise_levels = list(key, v)?,
            "patches_per_shape" => self.patches_per_shape = num(key, v)?,
            "validation_patches_per_shape" => self.validation_patches_per_shape = num(key, v)?,
            "k" => self.k = num(key, v)?,
            "r_fraction" => self.r_fraction = num(key, v)?,
            "theta_th" => self.theta_th = num(key, v)?,
            "search_growth" => self.search_growth = num(key, v)?,
            "max_search_factor" => self.max_search_factor = num(key, v)?,
            "encoder_epochs" => self.train.encoder_epochs = num(key, v)?,
            "estimator_epochs" => self.train.estimator_epochs = num(key, v)?,
            "batch_size" => self.train.batch_size = num(key, v)?,
            "lr" => self.train.lr = num(key, v)?,
            "momentum" => self.train.momentum = num(key, v)?,
            "plateau_factor" => self.train.plateau_factor = num(key, v)?,
            "plateau_patience" => self.train.plateau_patience = num(key, v)?,
            "ablation_no_encoder" => self.train.ablation_no_encoder = num(key, v)?,
            "margin" => self.train.margin = TripletMargin::new(num(key, v)?)?,
            "sigma_s" => self.train.support_angle = SupportAngle::new(num(key, v)?)?,
            "exponent" => self.train.exponent = num(key, v)?,
            other => return Err(Error::InvalidArgument(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Canonical `key = value` text; parsing it back reproduces the config.
    pub fn to_text(&self) -> String {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        }
        let t = &self.train;
        let profile = match self.profile {
            Profile::Toy => "toy",
            Profile::Paper => "paper",
        };
        let mut s = String::new();
        let _ = writeln!(s, "profile = {profile}");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "shapes = {}", join(&self.shapes));
        let _ = writeln!(s, "validation_shapes = {}", join(&self.validation_shapes));
        let _ = writeln!(s, "points_per_shape = {}", self.points_per_shape);
        let _ = writeln!(s, "noise_levels = {}", join(&self.noise_levels));
        let _ = writeln!(s, "patches_per_shape = {}", self.patches_per_shape);
        let _ = writeln!(
            s,
            "validation_patches_per_shape = {}",
            self.validation_patches_per_shape
        );
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "r_fraction = {}", self.r_fraction);
        let _ = writeln!(s, "theta_th = {}", self.theta_th);
        let _ = writeln!(s, "search_growth = {}", self.search_growth);
        let _ = writeln!(s, "max_search_factor = {}", self.max_search_factor);
        let _ = writeln!(s, "encoder_epochs = {}", t.encoder_epochs);
        let _ = writeln!(s, "estimator_epochs = {}", t.estimator_epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "lr = {}", t.lr);
        let _ = writeln!(s, "momentum = {}", t.momentum);
        let _ = writeln!(s, "plateau_factor = {}", t.plateau_factor);
        let _ = writeln!(s, "plateau_patience = {}", t.plateau_patience);
        let _ = writeln!(s, "ablation_no_encoder = {}", t.ablation_no_encoder);
        let _ = writeln!(s, "margin = {}", t.margin.value());
        let _ = writeln!(s, "sigma_s = {}", t.support_angle.degrees());
        let _ = writeln!(s, "exponent = {}", t.exponent);
        s
    }

    /// First 8 bytes of the SHA-256 of [`RunConfig::to_text`].
    pub fn hash(&self) -> u64 {
        let d = Sha256::digest(self.to_text().as_bytes());
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_config_text(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }
}

/// Parse flat `key = value` lines; `#` starts a comment. A `profile` key is
/// moved first so it does not clobber settings that follow it.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: "<config>".into(),
                line: i + 1,
                message: format!("expected 'key = value', got '{line}'"),
            });
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    out.sort_by_key(|(k, _)| k != "profile");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for profile in [Profile::Toy, Profile::Paper] {
            let mut c = RunConfig::profile(profile, 17);
            c.train.batch_size = 7;
            c.noise_levels = vec![0.0, 0.0025];
            let mut d = RunConfig::profile(Profile::Toy, 0);
            d.apply_text(&c.to_text()).unwrap();
            assert_eq!(c, d);
            assert_eq!(c.hash(), d.hash());
        }
    }

    #[test]
    fn profiles_match_protocol() {
        let p = RunConfig::profile(Profile::Paper, 0);
        assert_eq!(p.noise_levels, vec![0.0, 0.0025, 0.005, 0.01, 0.015, 0.025]);
        assert_eq!((p.patches_per_shape, p.k, p.r_fraction), (8000, 500, 0.05));
        assert_eq!((p.train.encoder_epochs, p.train.estimator_epochs), (5, 50));
        assert_eq!((p.train.lr, p.train.momentum), (0.01, 0.9));
        let t = RunConfig::profile(Profile::Toy, 0);
        assert_eq!(t.shapes.len(), 4);
        assert_eq!(t.noise_levels, vec![0.0, 0.005, 0.01]);
        assert_eq!(
            (t.patches_per_shape, t.train.encoder_epochs, t.train.estimator_epochs),
            (500, 5, 15)
        );
        assert_eq!((t.points_per_shape, t.k, t.r_fraction), (20_000, 64, 0.03));
    }

    #[test]
    fn comments_errors_and_hash_sensitivity() {
        let mut c = RunConfig::profile(Profile::Toy, 1);
        let h = c.hash();
        c.apply_text("# comment\nbatch_size = 32 # trailing\n\n").unwrap();
        assert_eq!(c.train.batch_size, 32);
        assert_ne!(c.hash(), h);
        assert!(c.apply_text("nonsense").is_err());
        assert!(c.apply_text("bogus_key = 3").is_err());
        assert!(c.apply_text("k = many").is_err());
        assert!(c.apply_text("shapes = cube,blob").is_err());
    }

    #[test]
    fn validation_names_are_distinct() {
        let spec = RunConfig::profile(Profile::Toy, 3).dataset_spec();
        assert_eq!(spec.validation_shapes[0].name, "cube-val");
        assert!(spec.train_shapes.iter().all(|s| !s.name.ends_with("-val")));
        assert_ne!(spec.train_shapes[0].seed, spec.validation_shapes[0].seed);
    }
}
