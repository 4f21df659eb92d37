//! Frame-level feature sequences consumed by the model.

mod mfb;

pub use mfb::{hz_to_mel, mel_filter_centers_hz, mfb, MfbConfig, LOG_FLOOR};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mfb,
    Embedding,
    Fused,
}

/// A `frames x dims` row-major matrix with its frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    frames: usize,
    dims: usize,
    frame_rate_hz: f64,
    kind: FeatureKind,
    /// Original column indices, present once dimensions have been selected.
    dim_labels: Option<Vec<usize>>,
}

impl FeatureMatrix {
    pub fn new(
        data: Vec<f64>,
        frames: usize,
        dims: usize,
        frame_rate_hz: f64,
        kind: FeatureKind,
    ) -> Result<Self> {
        if dims == 0 {
            return Err(Error::Shape("feature matrix needs at least one dimension".into()));
        }
        if data.len() != frames * dims {
            return Err(Error::Shape(format!(
                "{} values for a {frames} x {dims} matrix",
                data.len()
            )));
        }
        if !(frame_rate_hz > 0.0) || !frame_rate_hz.is_finite() {
            return Err(Error::Parameter(format!(
                "frame rate {frame_rate_hz} must be positive"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("feature matrix contains non-finite values".into()));
        }
        Ok(Self {
            data,
            frames,
            dims,
            frame_rate_hz,
            kind,
            dim_labels: None,
        })
    }

    pub fn with_dim_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.dims {
            return Err(Error::Shape(format!(
                "{} labels for {} dims",
                labels.len(),
                self.dims
            )));
        }
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter("dimension labels must be unique".into()));
        }
        self.dim_labels = Some(labels);
        Ok(self)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn dim_labels(&self) -> Option<&[usize]> {
        self.dim_labels.as_deref()
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.dims..(frame + 1) * self.dims]
    }

    pub fn get(&self, frame: usize, dim: usize) -> f64 {
        self.data[frame * self.dims + dim]
    }

    pub fn column(&self, dim: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(dim).step_by(self.dims).copied()
    }

    /// Keeps frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Self {
        Self {
            data: self.data[start * self.dims..(start + len) * self.dims].to_vec(),
            frames: len,
            ..self.clone_meta()
        }
    }

    pub fn truncated(&self, frames: usize) -> Self {
        self.slice_frames(0, frames.min(self.frames))
    }

    /// Per-column z-scoring over this sequence; constant columns become zero.
    pub fn standardized(&self) -> Self {
        let n = self.frames.max(1) as f64;
        let mut out = self.data.clone();
        for d in 0..self.dims {
            let mean = self.column(d).sum::<f64>() / n;
            let var = self.column(d).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            for f in 0..self.frames {
                let v = &mut out[f * self.dims + d];
                *v = if std > 0.0 { (*v - mean) / std } else { 0.0 };
            }
        }
        Self {
            data: out,
            frames: self.frames,
            ..self.clone_meta()
        }
    }

    pub(crate) fn from_parts_unchecked(
        data: Vec<f64>,
        frames: usize,
        template: &FeatureMatrix,
    ) -> Self {
        debug_assert_eq!(data.len(), frames * template.dims);
        Self {
            data,
            frames,
            ..template.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            data: Vec::new(),
            frames: 0,
            dims: self.dims,
            frame_rate_hz: self.frame_rate_hz,
            kind: self.kind,
            dim_labels: self.dim_labels.clone(),
        }
    }

    pub(crate) fn set_frame_rate(&mut self, hz: f64) {
        self.frame_rate_hz = hz;
    }

    pub(crate) fn set_columns(&mut self, data: Vec<f64>, dims: usize, labels: Option<Vec<usize>>) {
        self.data = data;
        self.dims = dims;
        self.dim_labels = labels;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_validates_shape_and_values() {
        assert!(FeatureMatrix::new(vec![0.0; 6], 2, 3, 100.0, FeatureKind::Mfb).is_ok());
        assert!(FeatureMatrix::new(vec![0.0; 5], 2, 3, 100.0, FeatureKind::Mfb).is_err());
        assert!(FeatureMatrix::new(vec![], 0, 0, 100.0, FeatureKind::Mfb).is_err());
        assert!(FeatureMatrix::new(vec![f64::NAN], 1, 1, 100.0, FeatureKind::Mfb).is_err());
        let m = FeatureMatrix::new(vec![0.0; 4], 2, 2, 100.0, FeatureKind::Mfb).unwrap();
        assert!(m.clone().with_dim_labels(vec![3, 3]).is_err());
        assert!(m.with_dim_labels(vec![3, 1]).is_ok());
    }

    #[test]
    fn standardized_columns() {
        let m = FeatureMatrix::new(
            vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0],
            3,
            2,
            100.0,
            FeatureKind::Mfb,
        )
        .unwrap();
        let s = m.standardized();
        let c0: Vec<f64> = s.column(0).collect();
        let k = (1.5f64).sqrt();
        assert!((c0[0] + k).abs() < 1e-12 && c0[1].abs() < 1e-12 && (c0[2] - k).abs() < 1e-12);
        assert!(s.column(1).all(|v| v == 0.0));
    }
}
