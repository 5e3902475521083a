//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic    8 bytes  "CANMDCKP"
//! version  u32      1
//! hash_dim u64
//! d_embed  u64
//! d_hidden u64
//! payload  f64 x N  embed, hidden_w, hidden_b, out_w, out_b (row-major)
//! ```

use std::fs;
use std::path::Path;

use super::{Matrix, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CANMDCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 3 * 8;

pub fn to_bytes(p: &ModelParams) -> Vec<u8> {
    let blocks: [&[f64]; 5] = [&p.embed.data, &p.hidden_w.data, &p.hidden_b, &p.out_w.data, &p.out_b];
    let n: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for d in [p.hash_dim(), p.d_embed(), p.d_hidden()] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in blocks.into_iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("missing checkpoint header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dim = |k: usize| u64::from_le_bytes(bytes[12 + 8 * k..20 + 8 * k].try_into().unwrap()) as usize;
    let (hash_dim, d_embed, d_hidden) = (dim(0), dim(1), dim(2));
    if hash_dim == 0 || d_embed == 0 || d_hidden == 0 {
        return Err(Error::Checkpoint("zero dimension in header".into()));
    }
    let sizes = [hash_dim * d_embed, d_embed * d_hidden, d_hidden, d_hidden * 2, 2];
    let n: usize = sizes.iter().sum();
    if bytes.len() != HEADER_LEN + 8 * n {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, header implies {}",
            bytes.len() - HEADER_LEN,
            8 * n
        )));
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |k: usize| -> Vec<f64> { values.by_ref().take(k).collect() };
    let embed = take(sizes[0]);
    let hidden_w = take(sizes[1]);
    let hidden_b = take(sizes[2]);
    let out_w = take(sizes[3]);
    let out_b = take(sizes[4]);
    let params = ModelParams {
        embed: Matrix {
            rows: hash_dim,
            cols: d_embed,
            data: embed,
        },
        hidden_w: Matrix {
            rows: d_embed,
            cols: d_hidden,
            data: hidden_w,
        },
        hidden_b,
        out_w: Matrix {
            rows: d_hidden,
            cols: 2,
            data: out_w,
        },
        out_b: [out_b[0], out_b[1]],
    };
    if !params.all_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
