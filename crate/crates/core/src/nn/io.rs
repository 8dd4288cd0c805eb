use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use super::estimator::EstimatorNet;
use super::layer::{Activation, DenseLayer, Mlp};
use crate::error::{Error, Result};
use crate::patch::{read_file, write_file, ByteReader};

const WEIGHTS_MAGIC: &[u8; 8] = b"TNWTS001";

/// Layout: magic "TNWTS001", u32 layer count, per layer (u32 rows, u32 cols,
/// u8 activation tag), then per layer the row-major weights followed by the
/// bias, all little-endian f64.
pub fn weights_to_bytes(net: &Mlp) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + net.num_params() * 8);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for l in &net.layers {
        out.extend_from_slice(&(l.fan_out() as u32).to_le_bytes());
        out.extend_from_slice(&(l.fan_in() as u32).to_le_bytes());
        out.push(l.activation.tag());
    }
    for l in &net.layers {
        for v in l.weights.iter().chain(l.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn weights_from_bytes(buf: &[u8]) -> Result<Mlp> {
    let mut r = ByteReader::new(buf);
    r.expect_magic(WEIGHTS_MAGIC)?;
    let count = r.u32()? as usize;
    if count == 0 || count > 1024 {
        return Err(Error::CorruptFile(format!("implausible layer count {count}")));
    }
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let act = Activation::from_tag(r.u8()?).ok_or_else(|| Error::CorruptFile("unknown activation tag".into()))?;
        shapes.push((rows, cols, act));
    }
    for w in shapes.windows(2) {
        if w[0].0 != w[1].1 {
            return Err(Error::CorruptFile(format!(
                "layer widths do not chain ({} -> {})",
                w[0].0, w[1].1
            )));
        }
    }
    let mut layers = Vec::with_capacity(count);
    for (rows, cols, activation) in shapes {
        let w = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let b = (0..rows).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(DenseLayer {
            weights: Array2::from_shape_vec((rows, cols), w).expect("rows x cols"),
            bias: Array1::from(b),
            activation,
        });
    }
    r.finish()?;
    Ok(Mlp { layers })
}

pub fn save_weights(net: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &weights_to_bytes(net))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Mlp> {
    weights_from_bytes(&read_file(path.as_ref())?)
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of the serialized weights.
pub fn weights_digest(net: &Mlp) -> String {
    hex_sha256(&weights_to_bytes(net))
}

const ESTIMATOR_MAGIC: &[u8; 8] = b"TNEST001";

/// Layout: magic "TNEST001", u32 offset length, the input offset as f64,
/// u64 byte length of the embedded weight file, then the weight file.
pub fn estimator_to_bytes(net: &EstimatorNet) -> Vec<u8> {
    let weights = weights_to_bytes(&net.mlp);
    let mut out = Vec::with_capacity(24 + 8 * net.input_offset.len() + weights.len());
    out.extend_from_slice(ESTIMATOR_MAGIC);
    out.extend_from_slice(&(net.input_offset.len() as u32).to_le_bytes());
    for v in &net.input_offset {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    out.extend_from_slice(&weights);
    out
}

pub fn estimator_from_bytes(buf: &[u8]) -> Result<EstimatorNet> {
    let mut r = ByteReader::new(buf);
    r.expect_magic(ESTIMATOR_MAGIC)?;
    let n = r.u32()? as usize;
    let offset = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let len = r.usize()?;
    let mlp = weights_from_bytes(r.take(len)?)?;
    r.finish()?;
    EstimatorNet::from_parts(mlp, Array1::from(offset))
}

pub fn save_estimator(net: &EstimatorNet, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &estimator_to_bytes(net))
}

pub fn load_estimator(path: impl AsRef<Path>) -> Result<EstimatorNet> {
    estimator_from_bytes(&read_file(path.as_ref())?)
}

/// Hex SHA-256 of the serialized estimator (offset included).
pub fn estimator_digest(net: &EstimatorNet) -> String {
    hex_sha256(&estimator_to_bytes(net))
}
