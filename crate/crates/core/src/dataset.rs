//! Turns manifest records into model-ready segments.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, resample, speed_augment, AudioBuffer, CANONICAL_RATE_HZ};
use crate::embeddings::{align_frame_rate, load_embeddings, select_dims};
use crate::error::{Error, Result};
use crate::features::{mfb, FeatureMatrix, MfbConfig};
use crate::manifest::{Manifest, ManifestRecord, Split};
use crate::respiration::{load_belt_csv, preprocess_trace, RespirationTrace};
use crate::segment::{segment, Segment, DEFAULT_SEGMENT_S};

pub const MODEL_FRAME_RATE_HZ: f64 = 100.0;

/// Where to find an utterance's embedding file, relative to its audio.
///
/// `{stem}` is replaced by the audio file stem; a bare layer number `k`
/// expands to `{stem}.layer<k>.emb`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingPattern(pub String);

impl EmbeddingPattern {
    pub fn layer(k: u16) -> Self {
        Self(format!("{{stem}}.layer{k}.emb"))
    }

    pub fn resolve(&self, audio_path: &Path) -> PathBuf {
        let stem = audio_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let name = self.0.replace("{stem}", &stem);
        match audio_path.parent() {
            Some(dir) => dir.join(name),
            None => PathBuf::from(name),
        }
    }
}

impl FromStr for EmbeddingPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(k) = s.parse::<u16>() {
            return Ok(Self::layer(k));
        }
        if !s.contains("{stem}") {
            return Err(Error::Parameter(format!(
                "embedding pattern {s:?} needs a layer number or a {{stem}} placeholder"
            )));
        }
        Ok(Self(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSpec {
    Mfb,
    Embedding(EmbeddingPattern),
    /// MFB branch first, embedding branch second.
    Fused(EmbeddingPattern),
}

impl FeatureSpec {
    pub fn embedding_pattern(&self) -> Option<&EmbeddingPattern> {
        match self {
            FeatureSpec::Mfb => None,
            FeatureSpec::Embedding(p) | FeatureSpec::Fused(p) => Some(p),
        }
    }

    pub fn uses_mfb(&self) -> bool {
        !matches!(self, FeatureSpec::Embedding(_))
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSpec::Mfb => f.write_str("mfb"),
            FeatureSpec::Embedding(p) => write!(f, "emb:{}", p.0),
            FeatureSpec::Fused(p) => write!(f, "fused:{}", p.0),
        }
    }
}

impl FromStr for FeatureSpec {
    type Err = Error;

    /// `mfb`, `emb:<layer|pattern>` or `fused:<layer|pattern>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "mfb" {
            return Ok(FeatureSpec::Mfb);
        }
        match s.split_once(':') {
            Some(("emb", p)) => Ok(FeatureSpec::Embedding(p.parse()?)),
            Some(("fused", p)) => Ok(FeatureSpec::Fused(p.parse()?)),
            _ => Err(Error::Parameter(format!(
                "feature spec {s:?}; expected mfb, emb:<layer> or fused:<layer>"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    pub features: FeatureSpec,
    /// Embedding columns to keep, in order.
    pub selection: Option<Vec<usize>>,
    pub segment_s: f64,
    /// Extra speed-perturbed copies of every utterance.
    pub speed_factors: Vec<f64>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            features: FeatureSpec::Mfb,
            selection: None,
            segment_s: DEFAULT_SEGMENT_S,
            speed_factors: Vec::new(),
        }
    }
}

/// Feature branches and target of one utterance, cut to a common length.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: Vec<FeatureMatrix>,
    pub target: RespirationTrace,
}

/// Resamples to the canonical model input rate if needed.
pub fn to_canonical_rate(audio: AudioBuffer) -> Result<AudioBuffer> {
    if audio.sample_rate_hz() == CANONICAL_RATE_HZ {
        return Ok(audio);
    }
    log::info!(
        "resampling {} Hz audio to {} Hz",
        audio.sample_rate_hz(),
        CANONICAL_RATE_HZ
    );
    AudioBuffer::new(
        resample(audio.samples(), audio.sample_rate_hz() as f64, CANONICAL_RATE_HZ as f64),
        CANONICAL_RATE_HZ,
    )
}

fn embedding_branch(path: &Path, selection: Option<&[usize]>, rate: f64) -> Result<FeatureMatrix> {
    let raw = load_embeddings(path)?;
    let aligned = align_frame_rate(&raw, rate)?;
    let picked = match selection {
        Some(idx) => select_dims(&aligned, idx)?,
        None => aligned,
    };
    Ok(picked.standardized())
}

/// Features computed from `audio`, embeddings read beside `audio_path`.
pub fn utterance_features(
    audio: &AudioBuffer,
    audio_path: &Path,
    spec: &FeatureSpec,
    selection: Option<&[usize]>,
) -> Result<Vec<FeatureMatrix>> {
    let mut out = Vec::with_capacity(2);
    if spec.uses_mfb() {
        out.push(mfb(audio, MfbConfig::default())?.standardized());
    }
    if let Some(p) = spec.embedding_pattern() {
        out.push(embedding_branch(&p.resolve(audio_path), selection, MODEL_FRAME_RATE_HZ)?);
    }
    Ok(out)
}

/// Truncates every branch and the target to the shortest frame count.
pub fn align_lengths(features: Vec<FeatureMatrix>, target: RespirationTrace) -> (Vec<FeatureMatrix>, RespirationTrace) {
    let n = features
        .iter()
        .map(|f| f.frames())
        .chain([target.len()])
        .min()
        .unwrap_or(0);
    (
        features.into_iter().map(|f| f.truncated(n)).collect(),
        target.truncated(n),
    )
}

pub fn load_utterance(
    manifest: &Manifest,
    record: &ManifestRecord,
    opts: &DatasetOptions,
    speed: Option<f64>,
) -> Result<Utterance> {
    let audio_path = manifest.resolve(&record.audio_path);
    let mut audio = to_canonical_rate(load_wav(&audio_path)?)?;
    let mut belt = load_belt_csv(&manifest.resolve(&record.belt_path))?;
    let mut id = record.utterance_id();
    if let Some(f) = speed {
        if opts.features.embedding_pattern().is_some() {
            return Err(Error::Parameter(
                "speed augmentation needs features computed from audio; use mfb".into(),
            ));
        }
        audio = speed_augment(&audio, f)?;
        belt = belt.time_scaled(f)?;
        id = format!("{id}@x{f}");
    }
    let features = utterance_features(&audio, &audio_path, &opts.features, opts.selection.as_deref())?;
    let target = preprocess_trace(&belt, MODEL_FRAME_RATE_HZ, audio.duration_s())?;
    let (features, target) = align_lengths(features, target);
    Ok(Utterance { id, features, target })
}

/// All segments of one split, in manifest order. Training splits also get
/// the speed-perturbed copies requested in `opts`.
pub fn load_split(manifest: &Manifest, split: Split, opts: &DatasetOptions) -> Result<Vec<Segment>> {
    let mut jobs: Vec<(&ManifestRecord, Option<f64>)> = Vec::new();
    for r in manifest.split(split) {
        jobs.push((r, None));
        if split == Split::Train {
            jobs.extend(opts.speed_factors.iter().map(|&f| (r, Some(f))));
        }
    }
    let per_utt = jobs
        .par_iter()
        .map(|&(r, f)| {
            let u = load_utterance(manifest, r, opts, f)?;
            segment(&u.id, &u.features, &u.target, opts.segment_s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_utt.into_iter().flatten().collect())
}

/// Embedding matrices with traces at the embedding frame rate, for saliency.
pub fn load_saliency_inputs(
    manifest: &Manifest,
    split: Split,
    pattern: &EmbeddingPattern,
) -> Result<Vec<(FeatureMatrix, RespirationTrace)>> {
    let records: Vec<&ManifestRecord> = manifest.split(split).collect();
    records
        .par_iter()
        .map(|r| {
            let audio_path = manifest.resolve(&r.audio_path);
            let emb = load_embeddings(&pattern.resolve(&audio_path))?;
            let belt = load_belt_csv(&manifest.resolve(&r.belt_path))?;
            let duration = emb.frames() as f64 / emb.frame_rate_hz();
            let trace = preprocess_trace(&belt, emb.frame_rate_hz(), duration)?;
            let (mut f, t) = align_lengths(vec![emb], trace);
            Ok((f.remove(0), t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_spec_parsing() {
        assert_eq!("mfb".parse::<FeatureSpec>().unwrap(), FeatureSpec::Mfb);
        let e: FeatureSpec = "emb:7".parse().unwrap();
        assert_eq!(e, FeatureSpec::Embedding(EmbeddingPattern::layer(7)));
        let f: FeatureSpec = "fused:{stem}.l4.emb".parse().unwrap();
        assert_eq!(f.to_string(), "fused:{stem}.l4.emb");
        assert!("emb:x".parse::<FeatureSpec>().is_err());
        assert!("wav2vec".parse::<FeatureSpec>().is_err());
        for s in ["mfb", "emb:{stem}.layer3.emb"] {
            assert_eq!(s.parse::<FeatureSpec>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn pattern_resolves_beside_audio() {
        let p = EmbeddingPattern::layer(4);
        assert_eq!(
            p.resolve(Path::new("/c/utt0001.wav")),
            PathBuf::from("/c/utt0001.layer4.emb")
        );
    }
}
