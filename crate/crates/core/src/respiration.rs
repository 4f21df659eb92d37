//! Chest-belt recordings and the frame-aligned regression target derived from them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

/// How far the belt may fall short of the requested interval at either end.
pub const MAX_EDGE_EXTRAPOLATION_S: f64 = 0.5;

/// Raw chest-belt force readings (Newton) with their timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct BeltTrace {
    timestamps_s: Vec<f64>,
    values: Vec<f64>,
}

impl BeltTrace {
    pub fn new(timestamps_s: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if timestamps_s.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} timestamps vs {} values",
                timestamps_s.len(),
                values.len()
            )));
        }
        if timestamps_s.len() < 2 {
            return Err(Error::Parameter("belt trace needs at least two readings".into()));
        }
        if timestamps_s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("belt timestamps must be strictly increasing".into()));
        }
        if timestamps_s.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("belt trace contains non-finite values".into()));
        }
        Ok(Self {
            timestamps_s,
            values,
        })
    }

    pub fn timestamps_s(&self) -> &[f64] {
        &self.timestamps_s
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Divides every timestamp by `factor`, matching audio sped up by the same factor.
    pub fn time_scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::Parameter(format!("time scale {factor} must be positive")));
        }
        Self::new(
            self.timestamps_s.iter().map(|t| t / factor).collect(),
            self.values.clone(),
        )
    }

    /// Linear interpolation, holding the edge value outside the recorded span.
    fn value_at(&self, t: f64, cursor: &mut usize) -> f64 {
        let ts = &self.timestamps_s;
        if t <= ts[0] {
            return self.values[0];
        }
        let last = ts.len() - 1;
        if t >= ts[last] {
            return self.values[last];
        }
        while ts[*cursor + 1] < t {
            *cursor += 1;
        }
        let (t0, t1) = (ts[*cursor], ts[*cursor + 1]);
        let (v0, v1) = (self.values[*cursor], self.values[*cursor + 1]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BeltRow {
    time_s: f64,
    force_n: f64,
}

/// Reads a belt CSV with header `time_s,force_n`.
pub fn load_belt_csv(path: &Path) -> Result<BeltTrace> {
    let bytes = fsio::read(path)?;
    parse_belt_csv(&bytes)
}

pub fn parse_belt_csv(bytes: &[u8]) -> Result<BeltTrace> {
    let mut reader = csv::Reader::from_reader(bytes);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["time_s", "force_n"] {
        return Err(Error::Format(format!(
            "belt CSV header must be time_s,force_n, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for row in reader.deserialize() {
        let row: BeltRow = row?;
        times.push(row.time_s);
        values.push(row.force_n);
    }
    BeltTrace::new(times, values)
}

pub fn encode_belt_csv(belt: &BeltTrace) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for (&time_s, &force_n) in belt.timestamps_s.iter().zip(&belt.values) {
        writer.serialize(BeltRow { time_s, force_n })?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Format(format!("csv buffer: {e}")))
}

pub fn write_belt_csv(path: &Path, belt: &BeltTrace) -> Result<()> {
    fsio::write_atomic(path, &encode_belt_csv(belt)?)
}

/// Per-frame normalized chest expansion, aligned to a feature sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespirationTrace {
    values: Vec<f64>,
    frame_rate_hz: f64,
}

impl RespirationTrace {
    pub fn new(values: Vec<f64>, frame_rate_hz: f64) -> Result<Self> {
        if !(frame_rate_hz > 0.0) || !frame_rate_hz.is_finite() {
            return Err(Error::Parameter(format!(
                "frame rate {frame_rate_hz} must be positive"
            )));
        }
        if let Some(i) = values
            .iter()
            .position(|v| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(Error::Parameter(format!(
                "trace value {} at frame {i} outside [-1, 1]",
                values[i]
            )));
        }
        Ok(Self {
            values,
            frame_rate_hz,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.frame_rate_hz
    }

    pub fn truncated(&self, frames: usize) -> Self {
        Self {
            values: self.values[..frames.min(self.values.len())].to_vec(),
            frame_rate_hz: self.frame_rate_hz,
        }
    }

    pub(crate) fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            values: self.values[start..start + len].to_vec(),
            frame_rate_hz: self.frame_rate_hz,
        }
    }
}

/// Number of whole frames of `frame_rate_hz` that fit in `duration_s`.
pub(crate) fn frame_count(duration_s: f64, frame_rate_hz: f64) -> usize {
    // The small guard keeps products such as 0.3 * 10 from flooring to 2.
    (duration_s * frame_rate_hz + 1e-9).floor().max(0.0) as usize
}

/// Resamples the belt onto the frame grid `t_i = i / frame_rate_hz`, z-scores
/// with this recording's own statistics and compresses with `tanh`.
pub fn preprocess_trace(
    belt: &BeltTrace,
    frame_rate_hz: f64,
    duration_s: f64,
) -> Result<RespirationTrace> {
    if !(frame_rate_hz > 0.0) {
        return Err(Error::Parameter(format!(
            "frame rate {frame_rate_hz} must be positive"
        )));
    }
    if !(duration_s > 0.0) {
        return Err(Error::Parameter(format!("duration {duration_s} must be positive")));
    }
    let first = belt.timestamps_s[0];
    let last = *belt.timestamps_s.last().unwrap();
    if first > MAX_EDGE_EXTRAPOLATION_S {
        return Err(Error::Coverage(format!(
            "belt starts at {first:.3} s, more than {MAX_EDGE_EXTRAPOLATION_S} s after 0"
        )));
    }
    if last < duration_s - MAX_EDGE_EXTRAPOLATION_S {
        return Err(Error::Coverage(format!(
            "belt ends at {last:.3} s, more than {MAX_EDGE_EXTRAPOLATION_S} s before {duration_s:.3} s"
        )));
    }

    let n = frame_count(duration_s, frame_rate_hz);
    if n < 2 {
        return Err(Error::Parameter(format!(
            "{duration_s} s at {frame_rate_hz} Hz yields fewer than two frames"
        )));
    }
    let mut cursor = 0;
    let mut frames: Vec<f64> = (0..n)
        .map(|i| belt.value_at(i as f64 / frame_rate_hz, &mut cursor))
        .collect();

    let (lo, hi) = frames
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi == lo {
        return Err(Error::DegenerateSignal(
            "belt signal is constant over the interval".into(),
        ));
    }
    let mean = frames.iter().sum::<f64>() / n as f64;
    let var = frames.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    for v in &mut frames {
        *v = ((*v - mean) / std).tanh();
    }
    RespirationTrace::new(frames, frame_rate_hz)
}
