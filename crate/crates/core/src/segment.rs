//! Fixed-length training examples cut from aligned utterances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::respiration::{frame_count, RespirationTrace};

/// Default segment length in seconds.
pub const DEFAULT_SEGMENT_S: f64 = 30.0;

/// One or two feature branches plus the target, all with the same frame count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub features: Vec<FeatureMatrix>,
    pub target: RespirationTrace,
    pub source_id: String,
    pub offset_s: f64,
}

impl Segment {
    pub fn new(
        features: Vec<FeatureMatrix>,
        target: RespirationTrace,
        source_id: impl Into<String>,
        offset_s: f64,
    ) -> Result<Self> {
        check_alignment(&features, &target)?;
        Ok(Self {
            features,
            target,
            source_id: source_id.into(),
            offset_s,
        })
    }

    pub fn frames(&self) -> usize {
        self.target.len()
    }
}

pub(crate) fn check_alignment(features: &[FeatureMatrix], target: &RespirationTrace) -> Result<()> {
    if features.is_empty() {
        return Err(Error::Alignment("at least one feature branch is required".into()));
    }
    for (b, f) in features.iter().enumerate() {
        if f.frames() != target.len() {
            return Err(Error::Alignment(format!(
                "branch {b} has {} frames, target has {}",
                f.frames(),
                target.len()
            )));
        }
        if (f.frame_rate_hz() - target.frame_rate_hz()).abs() > 1e-9 {
            return Err(Error::Alignment(format!(
                "branch {b} runs at {} Hz, target at {} Hz",
                f.frame_rate_hz(),
                target.frame_rate_hz()
            )));
        }
    }
    Ok(())
}

/// Cuts consecutive non-overlapping windows of `floor(seg_s * frame_rate)`
/// frames. A trailing remainder shorter than one window is dropped.
pub fn segment(
    source_id: &str,
    features: &[FeatureMatrix],
    target: &RespirationTrace,
    seg_s: f64,
) -> Result<Vec<Segment>> {
    if !(seg_s > 0.0) {
        return Err(Error::Parameter(format!("segment length {seg_s} must be positive")));
    }
    check_alignment(features, target)?;
    let rate = target.frame_rate_hz();
    let len = frame_count(seg_s, rate);
    if len == 0 {
        return Err(Error::Parameter(format!(
            "{seg_s} s is shorter than one frame at {rate} Hz"
        )));
    }
    Ok((0..target.len() / len)
        .map(|i| {
            let start = i * len;
            Segment {
                features: features.iter().map(|f| f.slice_frames(start, len)).collect(),
                target: target.slice(start, len),
                source_id: source_id.to_string(),
                offset_s: start as f64 / rate,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;

    fn utterance(seconds: usize) -> (FeatureMatrix, RespirationTrace) {
        let frames = seconds * 100;
        let f = FeatureMatrix::new(
            (0..frames * 2).map(|i| i as f64).collect(),
            frames,
            2,
            100.0,
            FeatureKind::Mfb,
        )
        .unwrap();
        let t = RespirationTrace::new(
            (0..frames).map(|i| (i as f64 * 0.01).sin() * 0.5).collect(),
            100.0,
        )
        .unwrap();
        (f, t)
    }

    #[test]
    fn ninety_five_seconds() {
        let (f, t) = utterance(95);
        let segs = segment("u", &[f], &t, 30.0).unwrap();
        assert_eq!(segs.len(), 3);
        let offsets: Vec<f64> = segs.iter().map(|s| s.offset_s).collect();
        assert_eq!(offsets, vec![0.0, 30.0, 60.0]);
        assert!(segs.iter().all(|s| s.frames() == 3000));
        let joined: Vec<f64> = segs.iter().flat_map(|s| s.target.values().to_vec()).collect();
        assert_eq!(&joined[..], &t.values()[..9000]);
        assert_eq!(segs[1].features[0].row(0), &[6000.0, 6001.0]);
    }

    #[test]
    fn shorter_than_one_window() {
        let (f, t) = utterance(29);
        assert!(segment("u", &[f], &t, 30.0).unwrap().is_empty());
    }

    #[test]
    fn misaligned_branches() {
        let (f, t) = utterance(31);
        let short = f.truncated(100);
        assert!(matches!(
            segment("u", &[f, short], &t, 30.0),
            Err(Error::Alignment(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn targets_concatenate_to_a_prefix(frames in 1usize..500, seg_s in 0.01f64..2.0) {
            let f = FeatureMatrix::new(vec![0.5; frames], frames, 1, 100.0, FeatureKind::Mfb).unwrap();
            let t = RespirationTrace::new((0..frames).map(|i| (i as f64 * 0.1).sin() * 0.9).collect(), 100.0).unwrap();
            let segs = segment("u", &[f], &t, seg_s).unwrap();
            let joined: Vec<f64> = segs.iter().flat_map(|s| s.target.values().to_vec()).collect();
            proptest::prop_assert_eq!(&joined[..], &t.values()[..joined.len()]);
            proptest::prop_assert!(t.len() - joined.len() < frame_count(seg_s, 100.0));
        }
    }
}
