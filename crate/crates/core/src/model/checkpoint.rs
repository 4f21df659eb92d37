//! Binary checkpoint format.
//!
//! ```text
//! magic "BRTHCKP1"
//! u32 LE  config length, then the config as JSON
//! per tensor, in declaration order:
//!     u32 LE ndim, ndim x u32 LE dims, prod(dims) x f64 LE
//! ```

use std::path::Path;

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::fsio;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BRTHCKP1";

pub fn encode_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(params.config())?;
    let mut out = Vec::with_capacity(16 + config.len() + params.num_scalars() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    for t in params.tensors() {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let len = r.u32("config length")?;
    let config: ModelConfig = serde_json::from_slice(r.take(len, "config")?)
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let mut params = ModelParams::zeros(&config)?;
    let names = params.tensor_names();
    for (t, name) in params.tensors_mut().into_iter().zip(names) {
        let ndim = r.u32(&name)?;
        let shape = (0..ndim)
            .map(|_| r.u32(&name))
            .collect::<Result<Vec<_>>>()?;
        if shape != t.shape() {
            return Err(Error::Format(format!(
                "{name}: stored shape {shape:?}, config implies {:?}",
                t.shape()
            )));
        }
        let raw = r.take(t.len() * 8, &name)?;
        for (v, b) in t.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fsio::write_atomic(path, &encode_checkpoint(params)?)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    decode_checkpoint(&fsio::read(path)?)
}
