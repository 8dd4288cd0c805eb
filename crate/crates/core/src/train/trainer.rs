use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::dataset::{Corpus, LabeledPatch};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::loss::{normal_loss_with_exponent, triplet_loss};
use crate::nn::{sgd_step, EncoderCache, EncoderNet, EstimatorNet, MlpGrads, OptimizerState, PlateauScheduler};
use crate::patch::write_file;
use crate::seed;
use crate::triplet::Triplet;

/// Rows per chunk when forwarding validation latents.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Triplet loss on the encoder.
    Encoder,
    /// Normal loss on the estimator; encoder frozen.
    Estimator,
    /// Normal loss on encoder and estimator together (no-encoder ablation).
    Joint,
}

impl Phase {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Phase::Encoder => 0,
            Phase::Estimator => 1,
            Phase::Joint => 2,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Phase::Encoder),
            1 => Some(Phase::Estimator),
            2 => Some(Phase::Joint),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Phase::Encoder => "encoder",
            Phase::Estimator => "estimator",
            Phase::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

pub fn write_history_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from("epoch,train_loss,val_loss,lr\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr);
    }
    write_file(path.as_ref(), s.as_bytes())
}

/// Epoch-level driver for one training phase. Shuffles are derived from
/// `(seed, phase, epoch)`, so a trainer restored from a checkpoint continues
/// exactly as an uninterrupted run.
pub struct Trainer<'a> {
    phase: Phase,
    config: TrainConfig,
    config_hash: u64,
    train: &'a Corpus,
    val: &'a Corpus,
    encoder: EncoderNet,
    estimator: Option<EstimatorNet>,
    encoder_opt: Option<OptimizerState>,
    estimator_opt: Option<OptimizerState>,
    scheduler: PlateauScheduler,
    epoch: usize,
    history: Vec<EpochRecord>,
    train_latents: Option<Array2<f64>>,
    val_latents: Option<Array2<f64>>,
}

fn ensure_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} is {v}")))
    }
}

fn encode_all(encoder: &EncoderNet, patches: &[LabeledPatch]) -> Result<Array2<f64>> {
    let rows = patches
        .par_iter()
        .map(|l| encoder.encode(l.patch.points.view()))
        .collect::<Result<Vec<_>>>()?;
    stack(&rows)
}

fn stack(rows: &[Array1<f64>]) -> Result<Array2<f64>> {
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::stack(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

fn triplet_value(encoder: &EncoderNet, t: &Triplet, config: &TrainConfig) -> Result<f64> {
    let a = encoder.encode(t.anchor.points.view())?;
    let p = encoder.encode(t.positive.points.view())?;
    let n = encoder.encode(t.negative.points.view())?;
    Ok(triplet_loss(a.view(), p.view(), n.view(), config.margin).value)
}

/// Loss and parameter gradient of one triplet.
fn triplet_grad(encoder: &EncoderNet, t: &Triplet, config: &TrainConfig) -> Result<(f64, Option<MlpGrads>)> {
    let ca = encoder.forward(t.anchor.points.view())?;
    let cp = encoder.forward(t.positive.points.view())?;
    let cn = encoder.forward(t.negative.points.view())?;
    let l = triplet_loss(ca.latent.view(), cp.latent.view(), cn.latent.view(), config.margin);
    if l.value == 0.0 {
        return Ok((0.0, None));
    }
    let mut g = MlpGrads::zeros_like(&encoder.mlp);
    encoder.backward(&ca, l.d_anchor.view(), &mut g);
    encoder.backward(&cp, l.d_positive.view(), &mut g);
    encoder.backward(&cn, l.d_negative.view(), &mut g);
    Ok((l.value, Some(g)))
}

/// Per-row normal loss on unit predictions; returns the summed loss and
/// `d_unit` scaled by `scale`.
fn normal_losses(
    output: &Array2<f64>,
    patches: &[&LabeledPatch],
    config: &TrainConfig,
    scale: f64,
) -> Result<(f64, Array2<f64>)> {
    let mut d = Array2::zeros(output.raw_dim());
    let mut total = 0.0;
    for (r, lp) in patches.iter().enumerate() {
        let o = output.row(r);
        let pred = Vec3::new(o[0], o[1], o[2]);
        let l = normal_loss_with_exponent(
            &pred,
            &lp.normals,
            &lp.center_normal,
            config.support_angle,
            config.exponent,
        )?;
        total += l.value;
        for c in 0..3 {
            d[[r, c]] = l.d_pred[c] * scale;
        }
    }
    Ok((total, d))
}

fn ordered_sum(net: &crate::nn::Mlp, parts: impl IntoIterator<Item = MlpGrads>) -> MlpGrads {
    let mut g = MlpGrads::zeros_like(net);
    for p in parts {
        g.add_assign(&p);
    }
    g
}

impl<'a> Trainer<'a> {
    fn new(
        phase: Phase,
        train: &'a Corpus,
        val: &'a Corpus,
        config: &TrainConfig,
        config_hash: u64,
        encoder: EncoderNet,
        estimator: Option<EstimatorNet>,
    ) -> Result<Self> {
        config.validate()?;
        match phase {
            Phase::Encoder if train.triplets.is_empty() => {
                return Err(Error::EmptyDataset("no training triplets for the encoder phase".into()))
            }
            Phase::Estimator | Phase::Joint if train.labeled.is_empty() => {
                return Err(Error::EmptyDataset("no labeled training patches".into()))
            }
            _ => {}
        }
        let encoder_opt =
            (phase != Phase::Estimator).then(|| OptimizerState::new(&encoder.mlp, config.lr, config.momentum));
        let estimator_opt = estimator
            .as_ref()
            .map(|e| OptimizerState::new(&e.mlp, config.lr, config.momentum));
        let mut t = Trainer {
            phase,
            config: config.clone(),
            config_hash,
            train,
            val,
            encoder,
            estimator,
            encoder_opt,
            estimator_opt,
            scheduler: PlateauScheduler::new(config.lr, config.plateau_factor, config.plateau_patience),
            epoch: 0,
            history: Vec::new(),
            train_latents: None,
            val_latents: None,
        };
        t.prepare_latents()?;
        Ok(t)
    }

    fn prepare_latents(&mut self) -> Result<()> {
        if self.phase == Phase::Estimator {
            self.train_latents = Some(encode_all(&self.encoder, &self.train.labeled)?);
            if !self.val.labeled.is_empty() {
                self.val_latents = Some(encode_all(&self.encoder, &self.val.labeled)?);
            }
        }
        Ok(())
    }

    /// Triplet-loss training of a freshly initialized encoder.
    pub fn encoder_phase(train: &'a Corpus, val: &'a Corpus, config: &TrainConfig, config_hash: u64) -> Result<Self> {
        let encoder = EncoderNet::init(seed::derive(config.seed, &[seed::tag("encoder-init")]));
        Self::new(Phase::Encoder, train, val, config, config_hash, encoder, None)
    }

    /// Normal-loss training of a fresh estimator on a frozen encoder.
    pub fn estimator_phase(
        train: &'a Corpus,
        val: &'a Corpus,
        encoder: &EncoderNet,
        config: &TrainConfig,
        config_hash: u64,
    ) -> Result<Self> {
        let estimator = EstimatorNet::init(seed::derive(config.seed, &[seed::tag("estimator-init")]));
        let mut t = Self::new(
            Phase::Estimator,
            train,
            val,
            config,
            config_hash,
            encoder.clone(),
            Some(estimator),
        )?;
        t.fit_input_offset()?;
        Ok(t)
    }

    /// Joint normal-loss training of a fresh encoder and estimator.
    pub fn joint_phase(train: &'a Corpus, val: &'a Corpus, config: &TrainConfig, config_hash: u64) -> Result<Self> {
        let encoder = EncoderNet::init(seed::derive(config.seed, &[seed::tag("encoder-init")]));
        let estimator = EstimatorNet::init(seed::derive(config.seed, &[seed::tag("estimator-init")]));
        let mut t = Self::new(Phase::Joint, train, val, config, config_hash, encoder, Some(estimator))?;
        t.fit_input_offset()?;
        Ok(t)
    }

    /// Center the estimator input on the mean latent of the training patches
    /// under the current encoder.
    fn fit_input_offset(&mut self) -> Result<()> {
        let computed;
        let latents = match &self.train_latents {
            Some(l) => l,
            None => {
                computed = encode_all(&self.encoder, &self.train.labeled)?;
                &computed
            }
        };
        self.estimator
            .as_mut()
            .expect("estimator present")
            .fit_input_offset(latents.view())
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn total_epochs(&self) -> usize {
        match self.phase {
            Phase::Encoder => self.config.encoder_epochs,
            Phase::Estimator | Phase::Joint => self.config.estimator_epochs,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.total_epochs()
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn encoder(&self) -> &EncoderNet {
        &self.encoder
    }

    pub fn estimator(&self) -> Option<&EstimatorNet> {
        self.estimator.as_ref()
    }

    pub fn learning_rate(&self) -> f64 {
        self.scheduler.learning_rate
    }

    fn epoch_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let s = seed::derive(self.config.seed, &[seed::tag(self.phase.name()), self.epoch as u64]);
        order.shuffle(&mut seed::rng(s));
        order
    }

    fn set_lr(&mut self) -> f64 {
        let lr = self.scheduler.learning_rate;
        for o in [&mut self.encoder_opt, &mut self.estimator_opt].into_iter().flatten() {
            o.learning_rate = lr;
        }
        lr
    }

    /// Run one epoch: shuffled mini-batches, then validation and the
    /// plateau update.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        if self.is_finished() {
            return Err(Error::InvalidArgument(format!(
                "{} phase already finished",
                self.phase.name()
            )));
        }
        let lr = self.set_lr();
        let train_loss = match self.phase {
            Phase::Encoder => self.encoder_epoch()?,
            Phase::Estimator => self.estimator_epoch()?,
            Phase::Joint => self.joint_epoch()?,
        };
        let val_loss = self.validation_loss()?.unwrap_or(train_loss);
        self.scheduler.update(val_loss);
        self.epoch += 1;
        let rec = EpochRecord {
            epoch: self.epoch,
            train_loss,
            val_loss,
            lr,
        };
        log::info!(
            "{} epoch {}/{}: train {:.6} val {:.6} lr {}",
            self.phase.name(),
            rec.epoch,
            self.total_epochs(),
            train_loss,
            val_loss,
            lr
        );
        self.history.push(rec);
        Ok(rec)
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.run_epoch()?;
        }
        Ok(())
    }

    fn encoder_epoch(&mut self) -> Result<f64> {
        let order = self.epoch_order(self.train.triplets.len());
        let mut total = 0.0;
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let encoder = &self.encoder;
            let config = &self.config;
            let parts = batch
                .par_iter()
                .map(|&i| triplet_grad(encoder, &self.train.triplets[i], config))
                .collect::<Result<Vec<_>>>()?;
            let mut batch_loss = 0.0;
            let mut grads = MlpGrads::zeros_like(&encoder.mlp);
            for (l, g) in parts {
                batch_loss += l;
                if let Some(g) = g {
                    grads.add_assign(&g);
                }
            }
            ensure_finite(
                batch_loss,
                &format!("encoder loss (epoch {}, batch {b})", self.epoch + 1),
            )?;
            total += batch_loss;
            grads.scale(1.0 / batch.len() as f64);
            let opt = self.encoder_opt.as_mut().expect("encoder phase has an optimizer");
            sgd_step(&mut self.encoder.mlp, &grads, opt)?;
        }
        Ok(total / order.len() as f64)
    }

    fn estimator_epoch(&mut self) -> Result<f64> {
        let latents = self.train_latents.as_ref().expect("latents prepared");
        let order = self.epoch_order(self.train.labeled.len());
        let estimator = self.estimator.as_mut().expect("estimator present");
        let mut total = 0.0;
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let x = latents.select(Axis(0), batch);
            let cache = estimator.forward(x.view())?;
            let patches: Vec<&LabeledPatch> = batch.iter().map(|&i| &self.train.labeled[i]).collect();
            let (loss, d) = normal_losses(&cache.output, &patches, &self.config, 1.0 / batch.len() as f64)?;
            ensure_finite(loss, &format!("estimator loss (epoch {}, batch {b})", self.epoch + 1))?;
            total += loss;
            let mut grads = MlpGrads::zeros_like(&estimator.mlp);
            estimator.backward(&cache, &d, &mut grads, false);
            let opt = self.estimator_opt.as_mut().expect("estimator optimizer");
            sgd_step(&mut estimator.mlp, &grads, opt)?;
        }
        Ok(total / order.len() as f64)
    }

    fn joint_epoch(&mut self) -> Result<f64> {
        let order = self.epoch_order(self.train.labeled.len());
        let mut total = 0.0;
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let encoder = &self.encoder;
            let caches = batch
                .par_iter()
                .map(|&i| encoder.forward(self.train.labeled[i].patch.points.view()))
                .collect::<Result<Vec<EncoderCache>>>()?;
            let latents = stack(&caches.iter().map(|c| c.latent.clone()).collect::<Vec<_>>())?;
            let estimator = self.estimator.as_ref().expect("estimator present");
            let cache = estimator.forward(latents.view())?;
            let patches: Vec<&LabeledPatch> = batch.iter().map(|&i| &self.train.labeled[i]).collect();
            let (loss, d) = normal_losses(&cache.output, &patches, &self.config, 1.0 / batch.len() as f64)?;
            ensure_finite(loss, &format!("joint loss (epoch {}, batch {b})", self.epoch + 1))?;
            total += loss;
            let mut est_grads = MlpGrads::zeros_like(&estimator.mlp);
            let d_latent = estimator
                .backward(&cache, &d, &mut est_grads, true)
                .expect("input gradient requested");
            let d_rows: Vec<_> = d_latent.axis_iter(Axis(0)).collect();
            let enc_parts: Vec<MlpGrads> = caches
                .par_iter()
                .zip(d_rows.into_par_iter())
                .map(|(c, dl)| {
                    let mut g = MlpGrads::zeros_like(&encoder.mlp);
                    encoder.backward(c, dl, &mut g);
                    g
                })
                .collect();
            let enc_grads = ordered_sum(&encoder.mlp, enc_parts);
            let est = self.estimator.as_mut().expect("estimator present");
            sgd_step(
                &mut est.mlp,
                &est_grads,
                self.estimator_opt.as_mut().expect("estimator optimizer"),
            )?;
            sgd_step(
                &mut self.encoder.mlp,
                &enc_grads,
                self.encoder_opt.as_mut().expect("encoder optimizer"),
            )?;
        }
        Ok(total / order.len() as f64)
    }

    /// Mean validation loss of the phase's objective, or `None` without
    /// validation data.
    pub fn validation_loss(&self) -> Result<Option<f64>> {
        match self.phase {
            Phase::Encoder => {
                if self.val.triplets.is_empty() {
                    return Ok(None);
                }
                let vals = self
                    .val
                    .triplets
                    .par_iter()
                    .map(|t| triplet_value(&self.encoder, t, &self.config))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Some(ensure_finite(
                    vals.iter().sum::<f64>() / vals.len() as f64,
                    "validation triplet loss",
                )?))
            }
            Phase::Estimator | Phase::Joint => {
                if self.val.labeled.is_empty() {
                    return Ok(None);
                }
                let estimator = self.estimator.as_ref().expect("estimator present");
                let mut total = 0.0;
                for (ci, chunk) in self.val.labeled.chunks(EVAL_CHUNK).enumerate() {
                    let x = match &self.val_latents {
                        Some(l) => l
                            .slice(ndarray::s![ci * EVAL_CHUNK..ci * EVAL_CHUNK + chunk.len(), ..])
                            .to_owned(),
                        None => encode_all(&self.encoder, chunk)?,
                    };
                    let cache = estimator.forward(x.view())?;
                    let refs: Vec<&LabeledPatch> = chunk.iter().collect();
                    total += normal_losses(&cache.output, &refs, &self.config, 1.0)?.0;
                }
                Ok(Some(ensure_finite(
                    total / self.val.labeled.len() as f64,
                    "validation normal loss",
                )?))
            }
        }
    }

    /// Snapshot of everything needed to continue this run.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            phase: self.phase,
            config_hash: self.config_hash,
            epoch: self.epoch,
            scheduler: self.scheduler.clone(),
            history: self.history.clone(),
            encoder: self.encoder.mlp.clone(),
            estimator: self.estimator.clone(),
            encoder_velocity: self.encoder_opt.as_ref().map(|o| o.velocity.clone()),
            estimator_velocity: self.estimator_opt.as_ref().map(|o| o.velocity.clone()),
        }
    }

    /// Continue a run from a checkpoint taken under the same config.
    pub fn resume(
        checkpoint: Checkpoint,
        train: &'a Corpus,
        val: &'a Corpus,
        config: &TrainConfig,
        config_hash: u64,
    ) -> Result<Self> {
        if checkpoint.config_hash != config_hash {
            return Err(Error::ConfigMismatch {
                expected: config_hash,
                found: checkpoint.config_hash,
            });
        }
        let encoder = EncoderNet::from_mlp(checkpoint.encoder)?;
        let estimator = checkpoint.estimator;
        let mut t = Self::new(checkpoint.phase, train, val, config, config_hash, encoder, estimator)?;
        let restore = |opt: &mut Option<OptimizerState>, v: Option<MlpGrads>, net: &crate::nn::Mlp| -> Result<()> {
            match (opt.as_mut(), v) {
                (Some(o), Some(v)) if v.shapes_match(net) => {
                    o.velocity = v;
                    Ok(())
                }
                (None, None) => Ok(()),
                _ => Err(Error::CorruptFile(
                    "checkpoint optimizer state does not match its phase".into(),
                )),
            }
        };
        restore(&mut t.encoder_opt, checkpoint.encoder_velocity, &t.encoder.mlp)?;
        if let Some(est) = &t.estimator {
            let net = est.mlp.clone();
            restore(&mut t.estimator_opt, checkpoint.estimator_velocity, &net)?;
        }
        t.scheduler = checkpoint.scheduler;
        t.epoch = checkpoint.epoch;
        t.history = checkpoint.history;
        Ok(t)
    }
}

/// Train a fresh encoder with the triplet loss for `encoder_epochs`.
pub fn train_encoder(
    train: &Corpus,
    val: &Corpus,
    config: &TrainConfig,
    config_hash: u64,
) -> Result<(EncoderNet, Vec<EpochRecord>)> {
    let mut t = Trainer::encoder_phase(train, val, config, config_hash)?;
    t.run_to_end()?;
    Ok((t.encoder.clone(), t.history))
}

#[derive(Debug, Clone)]
pub struct TrainedEstimator {
    pub encoder: EncoderNet,
    pub estimator: EstimatorNet,
    pub history: Vec<EpochRecord>,
}

/// Train a fresh estimator. With `config.ablation_no_encoder` the encoder is
/// trained jointly from scratch and `encoder` is ignored; otherwise `encoder`
/// is required and stays frozen.
pub fn train_estimator(
    train: &Corpus,
    val: &Corpus,
    encoder: Option<&EncoderNet>,
    config: &TrainConfig,
    config_hash: u64,
) -> Result<TrainedEstimator> {
    let mut t = if config.ablation_no_encoder {
        Trainer::joint_phase(train, val, config, config_hash)?
    } else {
        let enc = encoder.ok_or_else(|| Error::InvalidArgument("estimator phase needs a trained encoder".into()))?;
        Trainer::estimator_phase(train, val, enc, config, config_hash)?
    };
    t.run_to_end()?;
    Ok(TrainedEstimator {
        encoder: t.encoder.clone(),
        estimator: t.estimator.clone().expect("estimator present"),
        history: t.history,
    })
}

/// Networks and histories of a full two-phase run.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub encoder: EncoderNet,
    pub estimator: EstimatorNet,
    /// Empty in no-encoder mode.
    pub encoder_history: Vec<EpochRecord>,
    pub estimator_history: Vec<EpochRecord>,
}

/// Encoder phase then estimator phase; with `ablation_no_encoder` only the
/// joint phase runs.
pub fn train_pipeline(train: &Corpus, val: &Corpus, config: &TrainConfig, config_hash: u64) -> Result<Pipeline> {
    let (encoder, encoder_history) = if config.ablation_no_encoder {
        (None, Vec::new())
    } else {
        let (e, h) = train_encoder(train, val, config, config_hash)?;
        (Some(e), h)
    };
    let t = train_estimator(train, val, encoder.as_ref(), config, config_hash)?;
    Ok(Pipeline {
        encoder: t.encoder,
        estimator: t.estimator,
        encoder_history,
        estimator_history: t.history,
    })
}
