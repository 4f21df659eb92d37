//! Mono PCM audio: WAV I/O, band-limited resampling and speed augmentation.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

/// Sample rate every feature extractor in the crate expects.
pub const CANONICAL_RATE_HZ: u32 = 16_000;

/// Speed factors used when augmenting a training corpus.
pub const DEFAULT_SPEED_FACTORS: [f64; 4] = [0.8, 0.9, 1.1, 1.25];

/// Zero crossings of the sinc kernel on each side of the interpolation point.
const SINC_ZERO_CROSSINGS: f64 = 24.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Parameter(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Reads a RIFF/WAVE file holding 16-bit mono PCM.
///
/// Multichannel or non-16-bit files are rejected rather than downmixed.
pub fn load_wav(path: &Path) -> Result<AudioBuffer> {
    let bytes = fsio::read(path)?;
    decode_wav(&bytes)
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("missing RIFF/WAVE signature".into()));
    }
    let riff_len = u32_at(bytes, 4) as usize;
    if riff_len + 8 != bytes.len() {
        return Err(Error::Format(format!(
            "RIFF chunk declares {} bytes but file holds {}",
            riff_len + 8,
            bytes.len()
        )));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if body + len > bytes.len() {
            return Err(Error::Format(format!(
                "chunk {:?} declares {len} bytes but only {} remain",
                String::from_utf8_lossy(id),
                bytes.len() - body
            )));
        }
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(Error::Format("fmt chunk shorter than 16 bytes".into()));
                }
                fmt = Some((
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                ));
            }
            b"data" => data = Some(&bytes[body..body + len]),
            _ => {}
        }
        pos = body + len + (len & 1);
    }
    if pos < bytes.len() {
        return Err(Error::Format("trailing bytes after last chunk".into()));
    }

    let (format_tag, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Format("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("missing data chunk".into()))?;
    if format_tag != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "format tag {format_tag}, only integer PCM is accepted"
        )));
    }
    if channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{channels} channels, only mono is accepted"
        )));
    }
    if bits != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{bits}-bit samples, only 16-bit is accepted"
        )));
    }
    if data.len() % 2 != 0 {
        return Err(Error::Format("odd number of data bytes for 16-bit PCM".into()));
    }
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    AudioBuffer::new(samples, rate)
}

/// Encodes as 16-bit mono PCM; samples are clamped to [-1, 1) before quantizing.
pub fn encode_wav(audio: &AudioBuffer) -> Vec<u8> {
    let data_len = audio.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &audio.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    fsio::write_atomic(path, &encode_wav(audio))
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Band-limited (windowed-sinc) resampling of `samples` from `from_hz` to
/// `to_hz`. Output length is `round(len * to_hz / from_hz)`.
///
/// The kernel cutoff follows the lower of the two Nyquist rates, so
/// downsampling is anti-aliased. When the rates are equal the output is the
/// input, sample for sample.
pub fn resample(samples: &[f64], from_hz: f64, to_hz: f64) -> Vec<f64> {
    let step = from_hz / to_hz;
    let out_len = (samples.len() as f64 / step).round() as usize;
    let cutoff = (1.0 / step).min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let n = samples.len() as isize;

    (0..out_len)
        .map(|j| {
            let pos = j as f64 * step;
            let lo = ((pos - half_width).ceil() as isize).max(0);
            let hi = ((pos + half_width).floor() as isize).min(n - 1);
            let mut acc = 0.0;
            for k in lo..=hi {
                let u = pos - k as f64;
                acc += samples[k as usize] * kernel(u, cutoff, half_width);
            }
            acc
        })
        .collect()
}

fn kernel(u: f64, cutoff: f64, half_width: f64) -> f64 {
    if u == 0.0 {
        return cutoff;
    }
    let x = PI * cutoff * u;
    // Blackman window over [-half_width, half_width].
    let r = u / half_width;
    let window = 0.42 + 0.5 * (PI * r).cos() + 0.08 * (2.0 * PI * r).cos();
    cutoff * x.sin() / x * window
}

/// Plays the audio `factor` times faster: pitch moves with speed.
///
/// The samples are reinterpreted at `rate * factor` and resampled back to the
/// original rate. Belt timestamps paired with this audio must be divided by
/// `factor` by the caller.
pub fn speed_augment(audio: &AudioBuffer, factor: f64) -> Result<AudioBuffer> {
    if !(0.5..=2.0).contains(&factor) {
        return Err(Error::Parameter(format!(
            "speed factor {factor} outside [0.5, 2.0]"
        )));
    }
    let rate = audio.sample_rate_hz as f64;
    let out = resample(&audio.samples, rate * factor, rate);
    AudioBuffer::new(out, audio.sample_rate_hz)
}
