use std::path::Path;

use super::trainer::{EpochRecord, Phase};
use crate::error::{Error, Result};
use crate::nn::{
    estimator_from_bytes, estimator_to_bytes, weights_from_bytes, weights_to_bytes, EstimatorNet, LayerGrad, Mlp,
    MlpGrads, PlateauScheduler,
};
use crate::patch::{read_file, write_file, ByteReader};

const CHECKPOINT_MAGIC: &[u8; 8] = b"TNCKPT01";

/// Resumable training state. Shuffle order is a function of the config seed
/// and the epoch counter, so no RNG stream needs saving.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    pub config_hash: u64,
    pub epoch: usize,
    pub scheduler: PlateauScheduler,
    pub history: Vec<EpochRecord>,
    pub encoder: Mlp,
    pub estimator: Option<EstimatorNet>,
    pub encoder_velocity: Option<MlpGrads>,
    pub estimator_velocity: Option<MlpGrads>,
}

// Velocities are stored in weight-file layout with the owning net's shapes.
fn velocity_as_mlp(v: &MlpGrads, like: &Mlp) -> Mlp {
    Mlp {
        layers: like
            .layers
            .iter()
            .zip(&v.layers)
            .map(|(l, g)| crate::nn::DenseLayer {
                weights: g.weights.clone(),
                bias: g.bias.clone(),
                activation: l.activation,
            })
            .collect(),
    }
}

fn mlp_as_velocity(m: Mlp) -> MlpGrads {
    MlpGrads {
        layers: m
            .layers
            .into_iter()
            .map(|l| LayerGrad {
                weights: l.weights,
                bias: l.bias,
            })
            .collect(),
    }
}

fn put_blob(out: &mut Vec<u8>, blob: Option<Vec<u8>>) {
    match blob {
        Some(b) => {
            out.push(1);
            out.extend_from_slice(&(b.len() as u64).to_le_bytes());
            out.extend_from_slice(&b);
        }
        None => out.push(0),
    }
}

fn get_blob<'a>(r: &mut ByteReader<'a>) -> Result<Option<&'a [u8]>> {
    match r.u8()? {
        0 => Ok(None),
        1 => {
            let n = r.usize()?;
            Ok(Some(r.take(n)?))
        }
        t => Err(Error::CorruptFile(format!("bad presence flag {t}"))),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(self.phase.tag());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        let s = &self.scheduler;
        for v in [s.learning_rate, s.factor, s.best_metric] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(s.patience as u64).to_le_bytes());
        out.extend_from_slice(&(s.stagnant_count as u64).to_le_bytes());
        out.extend_from_slice(&(self.history.len() as u64).to_le_bytes());
        for h in &self.history {
            out.extend_from_slice(&(h.epoch as u64).to_le_bytes());
            for v in [h.train_loss, h.val_loss, h.lr] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        put_blob(&mut out, Some(weights_to_bytes(&self.encoder)));
        put_blob(&mut out, self.estimator.as_ref().map(estimator_to_bytes));
        put_blob(
            &mut out,
            self.encoder_velocity
                .as_ref()
                .map(|v| weights_to_bytes(&velocity_as_mlp(v, &self.encoder))),
        );
        put_blob(
            &mut out,
            match (&self.estimator_velocity, &self.estimator) {
                (Some(v), Some(e)) => Some(weights_to_bytes(&velocity_as_mlp(v, &e.mlp))),
                _ => None,
            },
        );
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let phase = Phase::from_tag(r.u8()?).ok_or_else(|| Error::CorruptFile("unknown phase tag".into()))?;
        let config_hash = r.u64()?;
        let epoch = r.usize()?;
        let learning_rate = r.f64()?;
        let factor = r.f64()?;
        let best_metric = r.f64()?;
        let patience = r.usize()?;
        let stagnant_count = r.usize()?;
        let n = r.usize()?;
        if n > epoch {
            return Err(Error::CorruptFile(format!("{n} history records for epoch {epoch}")));
        }
        let history = (0..n)
            .map(|_| {
                Ok(EpochRecord {
                    epoch: r.usize()?,
                    train_loss: r.f64()?,
                    val_loss: r.f64()?,
                    lr: r.f64()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let encoder = weights_from_bytes(
            get_blob(&mut r)?.ok_or_else(|| Error::CorruptFile("checkpoint lacks encoder".into()))?,
        )?;
        let estimator = get_blob(&mut r)?.map(estimator_from_bytes).transpose()?;
        let encoder_velocity = get_blob(&mut r)?
            .map(weights_from_bytes)
            .transpose()?
            .map(mlp_as_velocity);
        let estimator_velocity = get_blob(&mut r)?
            .map(weights_from_bytes)
            .transpose()?
            .map(mlp_as_velocity);
        r.finish()?;
        Ok(Checkpoint {
            phase,
            config_hash,
            epoch,
            scheduler: PlateauScheduler {
                factor,
                patience,
                best_metric,
                stagnant_count,
                learning_rate,
            },
            history,
            encoder,
            estimator,
            encoder_velocity,
            estimator_velocity,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}
