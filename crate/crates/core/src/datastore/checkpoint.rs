//! Model checkpoints: named real64 tensors.
//!
//! Same framing as the embedding tables, with tensor names as ids and a
//! shape header before each payload:
//!
//! ```text
//! magic   8 bytes  "DIMCKPT1"
//! version u32      1
//! dim     u32      hidden size
//! count   u64
//! count × { name_len u16, name bytes, rank u32, rank × u32 dims, f64 payload }
//! ```
//!
//! Tensors are written sorted by name.

use std::fs;
use std::path::Path;

use crate::datastore::{write_atomic, Reader};
use crate::error::{Error, Result};
use crate::fusion::{weight_name, AttentionParams, Branch, Projection, MENTION_PROJ};
use crate::numkernel::{Param, Tensor2};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DIMCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_to_bytes(params: &AttentionParams) -> Result<Vec<u8>> {
    let mut tensors: Vec<&Param> = params.params().iter().collect();
    tensors.sort_by(|a, b| a.name.cmp(&b.name));
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for p in tensors {
        let len = u16::try_from(p.name.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name {} is too long", p.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        for x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decoded header dim and raw named tensors.
pub fn checkpoint_tensors_from_bytes(bytes: &[u8]) -> Result<(usize, Vec<Param>)> {
    let mut r = Reader::new(bytes);
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic, expected DIMCKPT1".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Format(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32()?;
        if rank != 2 {
            return Err(Error::Format(format!("tensor {name} has rank {rank}, expected 2")));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let value = Tensor2::new(rows, cols, data)
            .map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
        if out.iter().any(|p: &Param| p.name == name) {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
        out.push(Param::new(name, value));
    }
    r.finish()?;
    Ok((dim, out))
}

/// Rebuild model parameters; heads are inferred from the tensor names.
pub fn checkpoint_from_bytes(bytes: &[u8], expected_dim: Option<usize>) -> Result<AttentionParams> {
    let (dim, tensors) = checkpoint_tensors_from_bytes(bytes)?;
    if let Some(want) = expected_dim {
        if want != dim {
            return Err(Error::Dimension(format!(
                "checkpoint has hidden size {dim}, configuration expects {want}"
            )));
        }
    }
    let heads = (0..)
        .take_while(|h| {
            let name = weight_name(Branch::Text, *h, Projection::Query);
            tensors.iter().any(|p| p.name == name)
        })
        .count();
    if heads == 0 {
        return Err(Error::Checkpoint(format!(
            "missing tensor {}",
            weight_name(Branch::Text, 0, Projection::Query)
        )));
    }
    let fuse_mention = tensors.iter().any(|p| p.name == MENTION_PROJ);
    AttentionParams::from_params(dim, heads, fuse_mention, tensors)
}

pub fn save_checkpoint(params: &AttentionParams, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &checkpoint_to_bytes(params)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<AttentionParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, expected_dim)
}
