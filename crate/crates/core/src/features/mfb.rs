//! Log mel-filterbank energies.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use super::{FeatureKind, FeatureMatrix};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Added to every filter energy before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfbConfig {
    pub n_mels: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
}

impl Default for MfbConfig {
    fn default() -> Self {
        Self {
            n_mels: 40,
            win_ms: 25.0,
            hop_ms: 10.0,
        }
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Filter edge frequencies: `n_mels + 2` points evenly spaced in mel from 0 Hz
/// to Nyquist. Filter `m` rises over `[p[m], p[m+1]]` and falls over `[p[m+1], p[m+2]]`.
fn mel_points_hz(n_mels: usize, sample_rate_hz: f64) -> Vec<f64> {
    let top = hz_to_mel(sample_rate_hz / 2.0);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Center frequency of each triangular filter.
pub fn mel_filter_centers_hz(n_mels: usize, sample_rate_hz: f64) -> Vec<f64> {
    mel_points_hz(n_mels, sample_rate_hz)[1..=n_mels].to_vec()
}

/// `n_mels x (n_fft/2 + 1)` triangular weights evaluated at each bin frequency.
fn filterbank(n_mels: usize, n_fft: usize, sample_rate_hz: f64) -> Vec<Vec<f64>> {
    let points = mel_points_hz(n_mels, sample_rate_hz);
    let n_bins = n_fft / 2 + 1;
    (0..n_mels)
        .map(|m| {
            let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sample_rate_hz / n_fft as f64;
                    let rise = (f - lo) / (center - lo);
                    let fall = (hi - f) / (hi - center);
                    rise.min(fall).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Computes `ln(E + LOG_FLOOR)` mel energies per frame.
///
/// Each frame is Hann-windowed and zero-padded to the next power of two
/// (512 points for a 25 ms window at 16 kHz). Frames start every hop; only
/// frames fully inside the signal are produced.
pub fn mfb(audio: &AudioBuffer, config: MfbConfig) -> Result<FeatureMatrix> {
    if config.n_mels == 0 || !(config.win_ms > 0.0) || !(config.hop_ms > 0.0) {
        return Err(Error::Parameter(format!("invalid filterbank config {config:?}")));
    }
    let rate = audio.sample_rate_hz() as f64;
    let win = (config.win_ms * rate / 1000.0).round() as usize;
    let hop = (config.hop_ms * rate / 1000.0).round() as usize;
    if win == 0 || hop == 0 {
        return Err(Error::Parameter("window or hop shorter than one sample".into()));
    }
    if audio.len() < win {
        return Err(Error::TooShort(format!(
            "{} samples, need at least one {win}-sample window",
            audio.len()
        )));
    }
    let n_fft = win.next_power_of_two();
    let n_bins = n_fft / 2 + 1;
    let frames = (audio.len() - win) / hop + 1;
    let bank = filterbank(config.n_mels, n_fft, rate);
    // Periodic Hann.
    let window: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos())
        .collect();

    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; n_bins];
    let mut out = Vec::with_capacity(frames * config.n_mels);
    let samples = audio.samples();
    for f in 0..frames {
        let start = f * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < win {
                Complex::new(samples[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for filter in &bank {
            let energy: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
            out.push((energy + LOG_FLOOR).ln());
        }
    }
    FeatureMatrix::new(out, frames, config.n_mels, 1000.0 / config.hop_ms, FeatureKind::Mfb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn silence_hits_log_floor() {
        let audio = AudioBuffer::new(vec![0.0; 16000], 16000).unwrap();
        let m = mfb(&audio, MfbConfig::default()).unwrap();
        assert!(m.data().iter().all(|&v| (v - LOG_FLOOR.ln()).abs() < 1e-12));
        assert!((LOG_FLOOR.ln() + 23.025_850_93).abs() < 1e-6);
    }

    #[test]
    fn frame_count_and_rate() {
        let audio = AudioBuffer::new(vec![0.0; 16000], 16000).unwrap();
        let m = mfb(&audio, MfbConfig::default()).unwrap();
        assert_eq!(m.frames(), (16000 - 400) / 160 + 1);
        assert_eq!(m.frames(), 98);
        assert_eq!(m.dims(), 40);
        assert_eq!(m.frame_rate_hz(), 100.0);
        assert_eq!(m.kind(), FeatureKind::Mfb);
    }

    #[test]
    fn too_short_audio() {
        let audio = AudioBuffer::new(vec![0.0; 399], 16000).unwrap();
        assert!(matches!(
            mfb(&audio, MfbConfig::default()),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn tone_lands_in_nearest_filter() {
        let s: Vec<f64> = (0..16000)
            .map(|i| 0.3 * (2.0 * PI * 1000.0 * i as f64 / 16000.0).sin())
            .collect();
        let audio = AudioBuffer::new(s, 16000).unwrap();
        let m = mfb(&audio, MfbConfig::default()).unwrap();

        // Oracle: mel centers recomputed directly from the HTK formula.
        let top = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        let nearest = (1..=40)
            .map(|i| {
                let mel = top * i as f64 / 41.0;
                700.0 * (10f64.powf(mel / 2595.0) - 1.0)
            })
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        for f in 0..m.frames() {
            let row = m.row(f);
            let argmax = (0..40).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, nearest, "frame {f}");
        }
    }

    #[test]
    fn hop_shift_covariance() {
        let s = noise(16000, 3);
        let a = mfb(&AudioBuffer::new(s.clone(), 16000).unwrap(), MfbConfig::default()).unwrap();
        let b = mfb(
            &AudioBuffer::new(s[160..].to_vec(), 16000).unwrap(),
            MfbConfig::default(),
        )
        .unwrap();
        for f in 0..b.frames() {
            for d in 0..40 {
                assert!((a.get(f + 1, d) - b.get(f, d)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn doubling_amplitude_adds_two_ln_two() {
        let s = noise(8000, 4);
        let doubled: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        let a = mfb(&AudioBuffer::new(s, 16000).unwrap(), MfbConfig::default()).unwrap();
        let b = mfb(&AudioBuffer::new(doubled, 16000).unwrap(), MfbConfig::default()).unwrap();
        let shift = 2.0 * 2f64.ln();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((y - x - shift).abs() < 1e-6);
        }
    }
}
