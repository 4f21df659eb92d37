//! Precomputed pretrained-model embeddings: the `.emb` container, frame-rate
//! alignment and dimension selection.
//!
//! File layout (little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 8    | magic `BRTHEMB1`              |
//! | 8      | 2    | layer (u16)                   |
//! | 10     | 2    | dims (u16)                    |
//! | 12     | 4    | frame rate x 100 (u32)        |
//! | 16     | 4    | n_frames (u32)                |
//! | 20     | ...  | n_frames * dims f32, frame-major |

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};
use crate::fsio;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"BRTHEMB1";
pub const HEADER_LEN: usize = 20;
pub const MAX_DIMS: u16 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingFileHeader {
    /// Extractor-defined layer index; treated as opaque here.
    pub layer: u16,
    pub dims: u16,
    pub frame_rate_centihz: u32,
    pub n_frames: u32,
}

impl EmbeddingFileHeader {
    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_centihz as f64 / 100.0
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..8].copy_from_slice(EMBEDDING_MAGIC);
        out[8..10].copy_from_slice(&self.layer.to_le_bytes());
        out[10..12].copy_from_slice(&self.dims.to_le_bytes());
        out[12..16].copy_from_slice(&self.frame_rate_centihz.to_le_bytes());
        out[16..20].copy_from_slice(&self.n_frames.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "embedding header needs {HEADER_LEN} bytes, file has {}",
                bytes.len()
            )));
        }
        if &bytes[..8] != EMBEDDING_MAGIC {
            return Err(Error::Format("bad embedding magic".into()));
        }
        let header = Self {
            layer: u16::from_le_bytes([bytes[8], bytes[9]]),
            dims: u16::from_le_bytes([bytes[10], bytes[11]]),
            frame_rate_centihz: u32::from_le_bytes(bytes[12..16].try_into().unwrap()),
            n_frames: u32::from_le_bytes(bytes[16..20].try_into().unwrap()),
        };
        if header.dims == 0 || header.dims > MAX_DIMS {
            return Err(Error::Format(format!(
                "dims {} outside [1, {MAX_DIMS}]",
                header.dims
            )));
        }
        if header.n_frames == 0 {
            return Err(Error::Format("embedding file has zero frames".into()));
        }
        if header.frame_rate_centihz == 0 {
            return Err(Error::Format("embedding frame rate is zero".into()));
        }
        Ok(header)
    }
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<(EmbeddingFileHeader, FeatureMatrix)> {
    let header = EmbeddingFileHeader::decode(bytes)?;
    let (frames, dims) = (header.n_frames as usize, header.dims as usize);
    let expected = frames * dims * 4;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Truncation {
            expected,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let matrix = FeatureMatrix::new(
        data,
        frames,
        dims,
        header.frame_rate_hz(),
        FeatureKind::Embedding,
    )?;
    Ok((header, matrix))
}

/// Reads an `.emb` file, returning its header alongside the matrix.
pub fn read_embedding_file(path: &Path) -> Result<(EmbeddingFileHeader, FeatureMatrix)> {
    decode_embeddings(&fsio::read(path)?)
}

pub fn load_embeddings(path: &Path) -> Result<FeatureMatrix> {
    read_embedding_file(path).map(|(_, m)| m)
}

/// Serializes `matrix` as float32. Values are narrowed, so only matrices read
/// from `.emb` files (or otherwise f32-representable) round-trip exactly.
pub fn encode_embeddings(matrix: &FeatureMatrix, layer: u16) -> Result<Vec<u8>> {
    let dims = u16::try_from(matrix.dims())
        .ok()
        .filter(|&d| d <= MAX_DIMS)
        .ok_or_else(|| Error::Parameter(format!("{} dims exceed {MAX_DIMS}", matrix.dims())))?;
    let n_frames = u32::try_from(matrix.frames())
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Parameter("embedding needs 1..=u32::MAX frames".into()))?;
    let header = EmbeddingFileHeader {
        layer,
        dims,
        frame_rate_centihz: (matrix.frame_rate_hz() * 100.0).round() as u32,
        n_frames,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.data().len() * 4);
    out.extend_from_slice(&header.encode());
    for &v in matrix.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn write_embeddings(path: &Path, matrix: &FeatureMatrix, layer: u16) -> Result<()> {
    fsio::write_atomic(path, &encode_embeddings(matrix, layer)?)
}

/// Integer-ratio frame-rate conversion: upsampling repeats each frame,
/// downsampling averages consecutive groups (a trailing partial group is dropped).
pub fn align_frame_rate(f: &FeatureMatrix, target_hz: f64) -> Result<FeatureMatrix> {
    let source = f.frame_rate_hz();
    if !(target_hz > 0.0) {
        return Err(Error::Alignment(format!("target rate {target_hz} must be positive")));
    }
    let ratio = target_hz / source;
    let integer_ratio = |r: f64| {
        let k = r.round();
        (k >= 1.0 && (r - k).abs() < 1e-9 * k).then_some(k as usize)
    };
    let dims = f.dims();
    let mut out = if ratio >= 1.0 {
        let k = integer_ratio(ratio).ok_or_else(|| {
            Error::Alignment(format!("{source} Hz -> {target_hz} Hz is not an integer ratio"))
        })?;
        let mut data = Vec::with_capacity(f.data().len() * k);
        for frame in 0..f.frames() {
            for _ in 0..k {
                data.extend_from_slice(f.row(frame));
            }
        }
        FeatureMatrix::from_parts_unchecked(data, f.frames() * k, f)
    } else {
        let k = integer_ratio(1.0 / ratio).ok_or_else(|| {
            Error::Alignment(format!("{source} Hz -> {target_hz} Hz is not an integer ratio"))
        })?;
        let groups = f.frames() / k;
        let mut data = Vec::with_capacity(groups * dims);
        for g in 0..groups {
            let first = f.row(g * k);
            for d in 0..dims {
                // Shifted mean: exact when the group is constant.
                let shift: f64 = (1..k).map(|i| f.get(g * k + i, d) - first[d]).sum();
                data.push(first[d] + shift / k as f64);
            }
        }
        FeatureMatrix::from_parts_unchecked(data, groups, f)
    };
    out.set_frame_rate(target_hz);
    Ok(out)
}

/// Keeps the columns named by `indices`, in that order. Labels compose with
/// any earlier selection so they always refer to the original columns.
pub fn select_dims(f: &FeatureMatrix, indices: &[usize]) -> Result<FeatureMatrix> {
    if indices.is_empty() {
        return Err(Error::Parameter("selection must keep at least one dimension".into()));
    }
    let mut seen = vec![false; f.dims()];
    for &i in indices {
        if i >= f.dims() {
            return Err(Error::Parameter(format!(
                "index {i} out of range for {} dims",
                f.dims()
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Parameter(format!("index {i} selected twice")));
        }
    }
    let mut data = Vec::with_capacity(f.frames() * indices.len());
    for frame in 0..f.frames() {
        let row = f.row(frame);
        data.extend(indices.iter().map(|&i| row[i]));
    }
    let labels = match f.dim_labels() {
        Some(old) => indices.iter().map(|&i| old[i]).collect(),
        None => indices.to_vec(),
    };
    let mut out = f.clone();
    out.set_columns(data, indices.len(), Some(labels));
    Ok(out)
}
