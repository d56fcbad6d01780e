//! Binary encoder checkpoints.
//!
//! ```text
//! magic        8 bytes  "TUPLENC1"
//! version      u32      = 1
//! activation   len u32, utf-8 name of the hidden activation
//! k            u32      number of modality MLPs
//! k + 1 MLPs:  layers u32, then per layer: rows u32, cols u32,
//!              rows*cols f64 weights (row-major), rows f64 biases
//! checksum     u64      parameter checksum of the decoded encoder
//! ```
//!
//! Reals are stored as raw little-endian bits, so a load reproduces the
//! encoder exactly.

use super::encoder::FusionEncoder;
use crate::error::{Error, Result};
use crate::numerics::{Activation, Matrix, Mlp, Parameters};
use crate::synthdata::{put_str, put_u32, put_u64, write_atomic, Reader};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TUPLENC1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_encoder(encoder: &FusionEncoder) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_str(&mut out, encoder.arch().activation.name());
    put_u32(&mut out, encoder.num_modalities() as u32);
    for mlp in encoder.modality_encoders().iter().chain(std::iter::once(encoder.fusion())) {
        put_u32(&mut out, mlp.weights().len() as u32);
        for (w, b) in mlp.weights().iter().zip(mlp.biases()) {
            put_u32(&mut out, w.rows() as u32);
            put_u32(&mut out, w.cols() as u32);
            for v in w.data().iter().chain(b) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    put_u64(&mut out, encoder.checksum());
    out
}

pub fn decode_encoder(bytes: &[u8], path: &Path) -> Result<FusionEncoder> {
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let corrupt = |reason: String| Error::Corruption {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(format("missing TUPLENC1 magic".into()));
    }
    let mut r = Reader { bytes, pos: 8, path };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format(format!("unsupported checkpoint version {version}")));
    }
    let name = r.string()?;
    let activation = Activation::from_name(&name).ok_or_else(|| corrupt(format!("unknown activation {name:?}")))?;
    let k = r.u32()? as usize;
    let mut mlps = Vec::with_capacity(k + 1);
    for _ in 0..=k {
        let layers = r.u32()? as usize;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for _ in 0..layers {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let cells = rows
                .checked_mul(cols)
                .filter(|c| c.saturating_add(rows).saturating_mul(8) <= bytes.len())
                .ok_or_else(|| corrupt(format!("layer of {rows} x {cols} exceeds the file")))?;
            let data = (0..cells).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            weights.push(Matrix::from_vec(rows, cols, data).map_err(|e| corrupt(e.to_string()))?);
            biases.push((0..rows).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        }
        mlps.push(Mlp::from_parts(weights, biases, activation).map_err(|e| corrupt(e.to_string()))?);
    }
    let stored = r.u64()?;
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let fusion = mlps.pop().ok_or_else(|| corrupt("no fusion MLP".into()))?;
    let encoder = FusionEncoder::from_parts(mlps, fusion).map_err(|e| corrupt(e.to_string()))?;
    if encoder.checksum() != stored {
        return Err(corrupt(format!(
            "parameter checksum {:016x} does not match stored {stored:016x}",
            encoder.checksum()
        )));
    }
    Ok(encoder)
}

pub fn save_encoder(encoder: &FusionEncoder, path: &Path) -> Result<()> {
    write_atomic(path, &encode_encoder(encoder))
}

pub fn load_encoder(path: &Path) -> Result<FusionEncoder> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_encoder(&bytes, path)
}
