//! Model checkpoint files.
//!
//! ```text
//! magic    8 bytes "GAZEMDL1"
//! version  u32     1
//! kind     u8      0 fusion, 1 mlp, 2 median, 3 linear
//! dim      u32     embedding width (0 unless fusion)
//! hidden   u32     hidden width (0 for median / linear)
//! params   f64 LE, in field order:
//!            fusion, mlp: dropout_rate, w_hidden, b_hidden, w_out, b_out
//!            median:      medians[4]
//!            linear:      weights[3][4] row-major, bias[4], ridge_lambda
//! trailer  u32     CRC-32 of every preceding byte
//! ```

use std::path::Path;

use thiserror::Error;

use super::fusion::{N_FEATURES, N_OUTPUTS};
use super::{FusionModel, LinearModel, MedianBaseline, Model, ModelError};

pub const MAGIC: &[u8; 8] = b"GAZEMDL1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown model kind tag {0}")]
    UnknownKind(u8),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("{0} trailing bytes in checkpoint")]
    TrailingBytes(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn kind_tag(model: &Model) -> u8 {
    match model {
        Model::Fusion(_) => 0,
        Model::Mlp(_) => 1,
        Model::Median(_) => 2,
        Model::Linear(_) => 3,
    }
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind_tag(model));
    let (dim, hidden) = match model {
        Model::Fusion(n) | Model::Mlp(n) => (n.dim(), n.hidden()),
        _ => (0, 0),
    };
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(hidden as u32).to_le_bytes());
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    match model {
        Model::Fusion(n) | Model::Mlp(n) => {
            put(n.dropout_rate());
            for s in n.param_slices() {
                s.iter().copied().for_each(&mut put);
            }
        }
        Model::Median(m) => m.medians.iter().copied().for_each(&mut put),
        Model::Linear(l) => {
            l.weights.iter().flatten().copied().for_each(&mut put);
            l.bias.iter().copied().for_each(&mut put);
            put(l.ridge_lambda);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model, ModelError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let mut pos = 8;
    let mut take = |n: usize| -> Result<&[u8], CheckpointError> {
        let s = bytes.get(pos..pos + n).ok_or(CheckpointError::Truncated)?;
        pos += n;
        Ok(s)
    };
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version).into());
    }
    let kind = take(1)?[0];
    if kind > 3 {
        return Err(CheckpointError::UnknownKind(kind).into());
    }
    let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let hidden = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let n_params = match kind {
        0 | 1 => {
            let n_in = (dim + N_FEATURES) as u128;
            1 + n_in * hidden as u128 + hidden as u128 + hidden as u128 * N_OUTPUTS as u128 + N_OUTPUTS as u128
        }
        2 => N_OUTPUTS as u128,
        _ => (N_FEATURES * N_OUTPUTS + N_OUTPUTS + 1) as u128,
    };
    let remaining = (bytes.len() - 8 - 4 - 1 - 8) as u128;
    if remaining < n_params * 8 + 4 {
        return Err(CheckpointError::Truncated.into());
    }
    if remaining > n_params * 8 + 4 {
        return Err(CheckpointError::TrailingBytes((remaining - n_params * 8 - 4) as usize).into());
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    if crc32fast::hash(&bytes[..body_end]) != stored {
        return Err(CheckpointError::ChecksumMismatch.into());
    }
    let mut values = bytes[8 + 4 + 1 + 8..body_end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut next = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };

    let model = match kind {
        0 | 1 => {
            if kind == 1 && dim != 0 {
                return Err(ModelError::InvalidModel("mlp checkpoint with nonzero dim".into()));
            }
            let dropout = next(1)[0];
            let n_in = dim + N_FEATURES;
            let net = FusionModel::from_parts(
                dim,
                hidden,
                dropout,
                next(n_in * hidden),
                next(hidden),
                next(hidden * N_OUTPUTS),
                next(N_OUTPUTS),
            )?;
            if kind == 0 {
                Model::Fusion(net)
            } else {
                Model::Mlp(net)
            }
        }
        2 => {
            let v = next(N_OUTPUTS);
            Model::Median(MedianBaseline {
                medians: v.try_into().unwrap(),
            })
        }
        _ => {
            let w = next(N_FEATURES * N_OUTPUTS);
            let mut weights = [[0.0; N_OUTPUTS]; N_FEATURES];
            for (j, row) in weights.iter_mut().enumerate() {
                row.copy_from_slice(&w[j * N_OUTPUTS..(j + 1) * N_OUTPUTS]);
            }
            let bias: [f64; N_OUTPUTS] = next(N_OUTPUTS).try_into().unwrap();
            let ridge_lambda = next(1)[0];
            Model::Linear(LinearModel { weights, bias, ridge_lambda })
        }
    };
    Ok(model)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, to_bytes(model)).map_err(CheckpointError::from)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model, ModelError> {
    let bytes = std::fs::read(path).map_err(CheckpointError::from)?;
    from_bytes(&bytes)
}

/// CRC-32 over the serialized parameters; equal checksums mean equal models.
pub fn parameter_checksum(model: &Model) -> u32 {
    crc32fast::hash(&to_bytes(model))
}
