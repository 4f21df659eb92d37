//! Synthetic speech-breathing corpus with known ground truth.
//!
//! The belt is a phase-jittered sinusoid. The audio carries broadband hiss
//! while the belt rises (audible inhalation) and speech-band noise with a
//! syllabic envelope while it falls (speech on the exhale).

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, AudioBuffer, CANONICAL_RATE_HZ};
use crate::error::{Error, Result};
use crate::manifest::{write_manifest, Manifest, ManifestRecord, Split};
use crate::respiration::{write_belt_csv, BeltTrace};

pub const BELT_RATE_HZ: f64 = 50.0;
pub const MANIFEST_NAME: &str = "manifest.jsonl";

const INHALE_BAND_HZ: (f64, f64) = (2000.0, 6000.0);
const SPEECH_BAND_HZ: (f64, f64) = (150.0, 2000.0);
const NOISE_FLOOR: f64 = 1e-3;
/// Minimum phase distance between an edge and the nearest belt peak.
const EDGE_MARGIN_RAD: f64 = 0.9;
const JITTER_HARMONICS: usize = 3;
const JITTER_MAX_RAD: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_utterances: usize,
    pub utterance_s: f64,
    pub rr_range_bpm: (f64, f64),
    pub inhale_noise_gain: f64,
    pub speech_band_gain: f64,
    pub seed: u64,
    pub utterances_per_speaker: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_utterances: 50,
            utterance_s: 60.0,
            rr_range_bpm: (5.0, 19.0),
            inhale_noise_gain: 2.0,
            speech_band_gain: 0.1,
            seed: 0,
            utterances_per_speaker: 2,
            val_fraction: 0.15,
            test_fraction: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.rr_range_bpm;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::Parameter(format!(
                "rr range ({lo}, {hi}) must satisfy 0 < low < high"
            )));
        }
        if !(self.utterance_s >= 30.0) || !self.utterance_s.is_finite() {
            return Err(Error::Parameter(format!(
                "utterance_s = {} must be at least 30",
                self.utterance_s
            )));
        }
        if !(self.inhale_noise_gain >= 1.0) || !(self.speech_band_gain > 0.0) {
            return Err(Error::Parameter(
                "inhale_noise_gain must be >= 1 and speech_band_gain > 0".into(),
            ));
        }
        if self.utterances_per_speaker == 0 {
            return Err(Error::Parameter("utterances_per_speaker must be >= 1".into()));
        }
        let (v, t) = (self.val_fraction, self.test_fraction);
        if !(0.0..1.0).contains(&v) || !(0.0..1.0).contains(&t) || v + t >= 1.0 {
            return Err(Error::Parameter(format!(
                "val/test fractions {v}, {t} must be in [0, 1) with sum < 1"
            )));
        }
        Ok(())
    }
}

/// Breathing phase `phi(t) = phi0 + 2 pi f t + psi(t)`, where the jitter
/// `psi` vanishes at both ends of the utterance.
#[derive(Debug, Clone)]
struct Phase {
    phi0: f64,
    omega: f64,
    jitter: [f64; JITTER_HARMONICS],
    duration_s: f64,
}

impl Phase {
    fn new(rr_bpm: f64, duration_s: f64, rng: &mut ChaCha8Rng) -> Self {
        let cycles = rr_bpm / 60.0 * duration_s;
        let peaks = cycles.round();
        let delta = cycles - peaks;
        // u is the phase left to travel from t = 0 to the first peak.
        let lo = EDGE_MARGIN_RAD.max(TAU * delta + EDGE_MARGIN_RAD);
        let hi = TAU.min(TAU * (delta + 1.0)) - EDGE_MARGIN_RAD;
        let u = rng.random_range(lo..hi);
        let mut jitter = [0.0; JITTER_HARMONICS];
        for j in &mut jitter {
            *j = rng.random_range(-JITTER_MAX_RAD..JITTER_MAX_RAD);
        }
        Self {
            phi0: PI / 2.0 - u,
            omega: TAU * rr_bpm / 60.0,
            jitter,
            duration_s,
        }
    }

    fn at(&self, t: f64) -> f64 {
        let psi: f64 = self
            .jitter
            .iter()
            .enumerate()
            .map(|(k, b)| b * (TAU * (k + 1) as f64 * t / self.duration_s).sin())
            .sum();
        self.phi0 + self.omega * t + psi
    }
}

/// Unit-RMS Gaussian noise restricted to `[lo, hi]` Hz by zeroing FFT bins.
fn band_noise(n: usize, rate: f64, (lo, hi): (f64, f64), rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k) as f64 * rate / n as f64;
        if bin < lo || bin > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.into_iter().map(|v| v / rms).collect()
    } else {
        out
    }
}

fn check_rr(cfg: &SynthConfig, rr_bpm: f64) -> Result<()> {
    let (lo, hi) = cfg.rr_range_bpm;
    if !(lo..=hi).contains(&rr_bpm) {
        return Err(Error::Parameter(format!(
            "rr {rr_bpm} br/min outside [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// One utterance: 16 kHz audio and a 50 Hz belt trace in Newton.
pub fn synth_utterance(cfg: &SynthConfig, rr_bpm: f64, seed: u64) -> Result<(AudioBuffer, BeltTrace)> {
    cfg.validate()?;
    check_rr(cfg, rr_bpm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.utterance_s;
    let phase = Phase::new(rr_bpm, d, &mut rng);

    let offset = rng.random_range(80.0..120.0);
    let amplitude = rng.random_range(5.0..25.0);
    let belt_n = (d * BELT_RATE_HZ).round() as usize + 1;
    let timestamps: Vec<f64> = (0..belt_n).map(|i| i as f64 / BELT_RATE_HZ).collect();
    let values: Vec<f64> = timestamps
        .iter()
        .map(|&t| {
            let noise: f64 = rng.sample(StandardNormal);
            offset + amplitude * (phase.at(t).sin() + 0.005 * noise)
        })
        .collect();
    let belt = BeltTrace::new(timestamps, values)?;

    let rate = CANONICAL_RATE_HZ as f64;
    let n = (d * rate).round() as usize;
    let hiss = band_noise(n, rate, INHALE_BAND_HZ, &mut rng);
    let voice = band_noise(n, rate, SPEECH_BAND_HZ, &mut rng);
    let syllable_hz = rng.random_range(3.0..5.0);
    let syllable_phase = rng.random_range(0.0..TAU);
    let inhale_amp = cfg.inhale_noise_gain * cfg.speech_band_gain;
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let rise = phase.at(t).cos();
            let volume = 0.5 * (1.0 + (TAU * syllable_hz * t + syllable_phase).sin());
            let exhale = (-4.0 * rise).clamp(0.0, 1.0);
            let floor: f64 = rng.sample(StandardNormal);
            let v = inhale_amp * rise.max(0.0) * hiss[i]
                + cfg.speech_band_gain * (0.2 + 0.8 * volume) * exhale * voice[i]
                + NOISE_FLOOR * floor;
            v.clamp(-1.0, 1.0)
        })
        .collect();
    Ok((AudioBuffer::new(samples, CANONICAL_RATE_HZ)?, belt))
}

/// What [`synth_corpus`] will generate for each utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtterancePlan {
    pub id: String,
    pub rr_bpm: f64,
    pub seed: u64,
    pub speaker_id: String,
    pub split: Split,
}

/// Draws RR values, per-utterance seeds and a speaker-disjoint split.
pub fn plan_corpus(cfg: &SynthConfig) -> Result<Vec<UtterancePlan>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.rr_range_bpm;
    let draws: Vec<(f64, u64)> = (0..cfg.n_utterances)
        .map(|_| (rng.random_range(lo..=hi), rng.random()))
        .collect();

    let n_speakers = cfg.n_utterances.div_ceil(cfg.utterances_per_speaker);
    let mut speakers: Vec<usize> = (0..n_speakers).collect();
    for i in (1..n_speakers).rev() {
        speakers.swap(i, rng.random_range(0..=i));
    }
    let n_val = (cfg.val_fraction * n_speakers as f64).round() as usize;
    let n_test = (cfg.test_fraction * n_speakers as f64).round() as usize;
    let mut split_of = vec![Split::Train; n_speakers];
    for (rank, &s) in speakers.iter().enumerate() {
        if rank < n_val {
            split_of[s] = Split::Val;
        } else if rank < n_val + n_test {
            split_of[s] = Split::Test;
        }
    }

    Ok(draws
        .into_iter()
        .enumerate()
        .map(|(i, (rr_bpm, seed))| {
            let speaker = i / cfg.utterances_per_speaker;
            UtterancePlan {
                id: format!("utt{i:04}"),
                rr_bpm,
                seed,
                speaker_id: format!("spk{speaker:03}"),
                split: split_of[speaker],
            }
        })
        .collect())
}

/// Writes `<id>.wav`, `<id>.belt.csv` and `manifest.jsonl` into `out_dir`.
pub fn synth_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    let plan = plan_corpus(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records = plan
        .par_iter()
        .map(|u| -> Result<ManifestRecord> {
            let (audio, belt) = synth_utterance(cfg, u.rr_bpm, u.seed)?;
            let audio_path = format!("{}.wav", u.id);
            let belt_path = format!("{}.belt.csv", u.id);
            write_wav(&out_dir.join(&audio_path), &audio)?;
            write_belt_csv(&out_dir.join(&belt_path), &belt)?;
            Ok(ManifestRecord {
                audio_path,
                belt_path,
                speaker_id: u.speaker_id.clone(),
                split: u.split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        records,
    };
    write_manifest(&out_dir.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    use crate::eval::{detect_breath_events, rr_from_events};
    use crate::respiration::preprocess_trace;

    fn short() -> SynthConfig {
        SynthConfig {
            utterance_s: 30.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn belt_has_one_maximum_per_breath() {
        for (rr, seed) in [(12.0, 1), (5.0, 2), (19.0, 3), (7.4, 4), (16.6, 5)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phase = Phase::new(rr, 60.0, &mut rng);
            let v: Vec<f64> = (0..=3000).map(|i| phase.at(i as f64 / 50.0).sin()).collect();
            let maxima = (1..v.len() - 1).filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1]).count();
            assert_eq!(maxima as f64, f64::round(rr), "rr {rr}");
        }
    }

    #[test]
    fn detected_rate_matches_the_generator() {
        let cfg = SynthConfig::default();
        for (rr, seed) in [(5.0, 11), (8.3, 12), (12.0, 13), (15.6, 14), (19.0, 15)] {
            let (audio, belt) = synth_utterance(&cfg, rr, seed).unwrap();
            let trace = preprocess_trace(&belt, 100.0, audio.duration_s()).unwrap();
            let got = rr_from_events(&detect_breath_events(&trace).unwrap());
            assert!((got - rr).abs() <= 0.5, "rr {rr}: detected {got}");
        }
    }

    #[test]
    fn inhale_windows_are_louder_than_mid_exhale() {
        let cfg = short();
        let (audio, _) = synth_utterance(&cfg, 10.0, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let phase = Phase::new(10.0, cfg.utterance_s, &mut rng);
        let (mut inhale, mut exhale) = ((0.0, 0usize), (0.0, 0usize));
        for (i, s) in audio.samples().iter().enumerate() {
            let c = phase.at(i as f64 / 16000.0).cos();
            if c > 0.9 {
                inhale.0 += s * s;
                inhale.1 += 1;
            } else if c < -0.9 {
                exhale.0 += s * s;
                exhale.1 += 1;
            }
        }
        let ratio = (inhale.0 / inhale.1 as f64) / (exhale.0 / exhale.1 as f64);
        assert!(ratio >= cfg.inhale_noise_gain, "energy ratio {ratio}");
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = short();
        let a = synth_utterance(&cfg, 9.0, 3).unwrap();
        let b = synth_utterance(&cfg, 9.0, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, synth_utterance(&cfg, 9.0, 4).unwrap().0);
    }

    #[test]
    fn rr_outside_range_is_rejected() {
        assert!(matches!(
            synth_utterance(&short(), 25.0, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn plan_is_speaker_disjoint_and_spans_the_range() {
        let cfg = SynthConfig {
            n_utterances: 400,
            ..SynthConfig::default()
        };
        let plan = plan_corpus(&cfg).unwrap();
        let mut by_split: [HashSet<&str>; 3] = Default::default();
        for u in &plan {
            let k = match u.split {
                Split::Train => 0,
                Split::Val => 1,
                Split::Test => 2,
            };
            by_split[k].insert(&u.speaker_id);
        }
        assert!(by_split[0].is_disjoint(&by_split[1]));
        assert!(by_split[0].is_disjoint(&by_split[2]));
        assert!(by_split[1].is_disjoint(&by_split[2]));
        assert!(by_split.iter().all(|s| !s.is_empty()));
        let rr: Vec<f64> = plan.iter().map(|u| u.rr_bpm).collect();
        let lo = rr.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = rr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo >= 5.0 && lo < 5.5 && hi <= 19.0 && hi > 18.5, "{lo} {hi}");
        assert_eq!(plan, plan_corpus(&cfg).unwrap());
    }

    #[test]
    fn band_noise_stays_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 4096;
        let x = band_noise(n, 16000.0, (2000.0, 6000.0), &mut rng);
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        for (k, c) in buf.iter().enumerate().take(n / 2) {
            let f = k as f64 * 16000.0 / n as f64;
            if !(2000.0..=6000.0).contains(&f) {
                assert!(c.norm() < 1e-8, "bin {f} Hz");
            }
        }
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
    }
}
