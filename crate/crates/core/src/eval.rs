//! Breath-event detection and the evaluation metric suite.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict, CccStats, ModelParams};
use crate::respiration::RespirationTrace;
use crate::segment::Segment;

/// Centered moving-average window applied before peak picking.
pub const SMOOTHING_S: f64 = 0.5;
/// Minimum peak prominence on the unit-std rescaled trace.
pub const MIN_PROMINENCE: f64 = 0.3;
pub const MIN_SEPARATION_S: f64 = 2.0;
pub const DEFAULT_MATCH_TOL_S: f64 = 1.0;
pub const ACC_TOLERANCE_BPM: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreathEvents {
    inhale_times_s: Vec<f64>,
    duration_s: f64,
}

impl BreathEvents {
    pub fn new(inhale_times_s: Vec<f64>, duration_s: f64) -> Result<Self> {
        if !(duration_s > 0.0) || !duration_s.is_finite() {
            return Err(Error::Parameter(format!("duration {duration_s} must be positive")));
        }
        if inhale_times_s.iter().any(|&t| !(0.0..=duration_s).contains(&t)) {
            return Err(Error::Parameter("event times must lie in [0, duration]".into()));
        }
        if inhale_times_s.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("event times must be strictly increasing".into()));
        }
        Ok(Self {
            inhale_times_s,
            duration_s,
        })
    }

    pub fn inhale_times_s(&self) -> &[f64] {
        &self.inhale_times_s
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn len(&self) -> usize {
        self.inhale_times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inhale_times_s.is_empty()
    }
}

fn moving_average(x: &[f64], half: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Strict local maxima; a flat top counts once, at its middle sample.
fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < x.len() {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead + 1 < x.len() && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                out.push((i + ahead - 1) / 2);
                i = ahead;
            }
        }
        i += 1;
    }
    out
}

/// Height of a peak above the higher of the two minima that separate it
/// from taller terrain (or the signal ends) on either side.
fn prominence(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left_min = h;
    for &v in x[..peak].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Keeps taller peaks first, dropping any peak closer than `distance`
/// samples to one already kept.
fn enforce_separation(x: &[f64], peaks: &[usize], distance: usize) -> Vec<usize> {
    let mut by_height: Vec<usize> = peaks.to_vec();
    by_height.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for p in by_height {
        if kept.iter().all(|&k| k.abs_diff(p) >= distance) {
            kept.push(p);
        }
    }
    kept.sort_unstable();
    kept
}

/// Inhale onsets: the minimum of the smoothed trace before each accepted peak.
pub fn detect_breath_events(trace: &RespirationTrace) -> Result<BreathEvents> {
    let rate = trace.frame_rate_hz();
    let v = trace.values();
    if (v.len() as f64) < 2.0 * rate {
        return Err(Error::Parameter(format!(
            "trace of {} frames is shorter than 2 s at {rate} Hz",
            v.len()
        )));
    }
    let duration = trace.duration_s();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if v.iter().all(|&x| x == v[0]) || !(std > 0.0) {
        return BreathEvents::new(Vec::new(), duration);
    }
    let z: Vec<f64> = v.iter().map(|x| (x - mean) / std).collect();
    let smooth = moving_average(&z, (SMOOTHING_S / 2.0 * rate).floor() as usize);

    let prominent: Vec<usize> = local_maxima(&smooth)
        .into_iter()
        .filter(|&p| prominence(&smooth, p) >= MIN_PROMINENCE)
        .collect();
    let peaks = enforce_separation(&smooth, &prominent, (MIN_SEPARATION_S * rate).ceil() as usize);

    let mut onsets = Vec::with_capacity(peaks.len());
    let mut start = 0;
    for &p in &peaks {
        let onset = (start..p)
            .min_by(|&a, &b| smooth[a].total_cmp(&smooth[b]))
            .unwrap_or(p);
        onsets.push(onset as f64 / rate);
        start = p + 1;
    }
    BreathEvents::new(onsets, duration)
}

/// Breaths per minute.
pub fn rr_from_events(events: &BreathEvents) -> f64 {
    events.len() as f64 * 60.0 / events.duration_s()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub n_matched: usize,
    pub insertions: usize,
    pub deletions: usize,
}

/// Maximum one-to-one matching of events within `tol_s`.
///
/// Both lists are time-sorted, so pairing each reference event with the
/// earliest still-unmatched estimate inside its window is optimal.
pub fn match_events(reference: &BreathEvents, estimate: &BreathEvents, tol_s: f64) -> Result<MatchResult> {
    if !(tol_s > 0.0) {
        return Err(Error::Parameter(format!("tolerance {tol_s} must be positive")));
    }
    let (r, e) = (reference.inhale_times_s(), estimate.inhale_times_s());
    let mut j = 0;
    let mut matched = 0;
    for &t in r {
        while j < e.len() && e[j] < t - tol_s {
            j += 1;
        }
        if j < e.len() && e[j] <= t + tol_s {
            matched += 1;
            j += 1;
        }
    }
    Ok(MatchResult {
        n_matched: matched,
        insertions: e.len() - matched,
        deletions: r.len() - matched,
    })
}

/// `(I + D) / N`.
pub fn ber(reference: &BreathEvents, estimate: &BreathEvents, tol_s: f64) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::UndefinedMetric(
            "breath error rate needs at least one reference event".into(),
        ));
    }
    let m = match_events(reference, estimate, tol_s)?;
    Ok((m.insertions + m.deletions) as f64 / reference.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ccc: f64,
    pub rmse: f64,
    pub mae_bpm: f64,
    pub acc_at_2bpm_pct: f64,
    pub ber: f64,
    pub n_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: String,
    pub ccc: f64,
    pub rmse: f64,
    pub rr_ref: f64,
    pub rr_est: f64,
    #[serde(rename = "I")]
    pub insertions: usize,
    #[serde(rename = "D")]
    pub deletions: usize,
    #[serde(rename = "N")]
    pub n_ref: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub segments: Vec<SegmentRecord>,
}

/// `(MAE, Acc@2bpm in percent)` of per-segment RR errors.
pub fn summarize_rr_errors(errors: &[f64]) -> (f64, f64) {
    if errors.is_empty() {
        return (0.0, 0.0);
    }
    let n = errors.len() as f64;
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    let hits = errors
        .iter()
        .filter(|e| e.abs() <= ACC_TOLERANCE_BPM + 1e-12)
        .count();
    (mae, 100.0 * hits as f64 / n)
}

pub fn segment_id(s: &Segment) -> String {
    format!("{}@{}", s.source_id, s.offset_s)
}

fn score_segment(s: &Segment, estimate: &[f64]) -> Result<SegmentRecord> {
    let target = &s.target;
    let stats = CccStats::compute(estimate, target.values())?;
    let rmse = (estimate
        .iter()
        .zip(target.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / estimate.len() as f64)
        .sqrt();
    let est_trace = RespirationTrace::new(estimate.to_vec(), target.frame_rate_hz())?;
    let ref_events = detect_breath_events(target)?;
    let est_events = detect_breath_events(&est_trace)?;
    let m = match_events(&ref_events, &est_events, DEFAULT_MATCH_TOL_S)?;
    Ok(SegmentRecord {
        segment_id: segment_id(s),
        ccc: stats.ccc(),
        rmse,
        rr_ref: rr_from_events(&ref_events),
        rr_est: rr_from_events(&est_events),
        insertions: m.insertions,
        deletions: m.deletions,
        n_ref: ref_events.len(),
    })
}

/// Scores precomputed per-segment estimates against the segment targets.
pub fn evaluate_estimates(dataset: &[Segment], estimates: &[Vec<f64>]) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Parameter("cannot evaluate an empty dataset".into()));
    }
    if dataset.len() != estimates.len() {
        return Err(Error::Shape(format!(
            "{} estimates for {} segments",
            estimates.len(),
            dataset.len()
        )));
    }
    let segments = dataset
        .par_iter()
        .zip(estimates)
        .map(|(s, e)| {
            if e.len() != s.frames() {
                return Err(Error::Shape(format!(
                    "{}: {} estimate frames, {} target frames",
                    segment_id(s),
                    e.len(),
                    s.frames()
                )));
            }
            score_segment(s, e)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = segments.len() as f64;
    let errors: Vec<f64> = segments.iter().map(|r| r.rr_est - r.rr_ref).collect();
    let (mae_bpm, acc_at_2bpm_pct) = summarize_rr_errors(&errors);
    let n_ref: usize = segments.iter().map(|r| r.n_ref).sum();
    if n_ref == 0 {
        return Err(Error::UndefinedMetric(
            "no reference breath events in the dataset; BER is undefined".into(),
        ));
    }
    let errs: usize = segments.iter().map(|r| r.insertions + r.deletions).sum();
    let report = MetricsReport {
        ccc: segments.iter().map(|r| r.ccc).sum::<f64>() / n,
        rmse: segments.iter().map(|r| r.rmse).sum::<f64>() / n,
        mae_bpm,
        acc_at_2bpm_pct,
        ber: errs as f64 / n_ref as f64,
        n_segments: segments.len(),
    };
    Ok(Evaluation { report, segments })
}

pub fn evaluate(params: &ModelParams, dataset: &[Segment]) -> Result<Evaluation> {
    let estimates = predict(params, dataset)?;
    evaluate_estimates(dataset, &estimates)
}

pub fn segments_csv(records: &[SegmentRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Format(format!("csv buffer: {e}")))
}

/// `frame,target,estimate` rows for plotting.
pub fn trace_csv(target: &[f64], estimate: &[f64]) -> Result<Vec<u8>> {
    if target.len() != estimate.len() {
        return Err(Error::Shape("target and estimate lengths differ".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["frame", "target", "estimate"])?;
    for (i, (t, e)) in target.iter().zip(estimate).enumerate() {
        w.write_record([i.to_string(), t.to_string(), e.to_string()])?;
    }
    w.into_inner()
        .map_err(|e| Error::Format(format!("csv buffer: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(cpm: f64, seconds: f64, amp: f64) -> RespirationTrace {
        let n = (seconds * 100.0) as usize;
        RespirationTrace::new(
            (0..n)
                .map(|i| amp * (std::f64::consts::TAU * cpm / 60.0 * i as f64 / 100.0).sin())
                .collect(),
            100.0,
        )
        .unwrap()
    }

    fn ev(t: &[f64]) -> BreathEvents {
        BreathEvents::new(t.to_vec(), 100.0).unwrap()
    }

    #[test]
    fn fifteen_per_minute() {
        let e = detect_breath_events(&sine(15.0, 60.0, 0.9)).unwrap();
        assert!((e.len() as i64 - 15).abs() <= 1, "{}", e.len());
    }

    #[test]
    fn constant_trace_has_no_events() {
        let t = RespirationTrace::new(vec![0.2; 3000], 100.0).unwrap();
        assert!(detect_breath_events(&t).unwrap().is_empty());
    }

    #[test]
    fn separation_caps_fast_breathing() {
        let e = detect_breath_events(&sine(50.0, 60.0, 0.9)).unwrap();
        assert!(e.len() < 50 && e.len() <= 31, "{}", e.len());
    }

    #[test]
    fn short_trace_is_rejected() {
        let t = RespirationTrace::new(vec![0.0; 150], 100.0).unwrap();
        assert!(matches!(detect_breath_events(&t), Err(Error::Parameter(_))));
    }

    #[test]
    fn onsets_precede_peaks_at_the_troughs() {
        // sin peaks at 1.25 + 5k s, troughs at 3.75 + 5k s (12 cycles/min).
        let e = detect_breath_events(&sine(12.0, 30.0, 0.9)).unwrap();
        let t = e.inhale_times_s();
        assert_eq!(t[0], 0.0);
        for (k, &x) in t[1..].iter().enumerate() {
            assert!((x - (3.75 + 5.0 * k as f64)).abs() < 0.05, "{x}");
        }
    }

    #[test]
    fn plateau_counts_once() {
        assert_eq!(local_maxima(&[0.0, 1.0, 1.0, 1.0, 0.0]), vec![2]);
        assert_eq!(local_maxima(&[0.0, 1.0, 1.0, 2.0, 0.0]), vec![3]);
        assert!(local_maxima(&[0.0, 1.0, 1.0]).is_empty());
    }

    #[test]
    fn prominence_examples() {
        let x = [0.0, 3.0, 1.0, 2.0, 0.5, 4.0, 0.0];
        assert_eq!(prominence(&x, 1), 2.5);
        assert_eq!(prominence(&x, 3), 1.0);
        assert_eq!(prominence(&x, 5), 4.0);
    }

    #[test]
    fn rr_arithmetic() {
        let e = BreathEvents::new((0..8).map(|i| i as f64 * 3.0).collect(), 30.0).unwrap();
        assert_eq!(rr_from_events(&e), 16.0);
        assert_eq!(rr_from_events(&BreathEvents::new(vec![], 30.0).unwrap()), 0.0);
        let e = BreathEvents::new((0..7).map(|i| i as f64 * 8.0).collect(), 60.0).unwrap();
        assert_eq!(rr_from_events(&e), 7.0);
    }

    #[test]
    fn matching_examples() {
        let same = ev(&[1.0, 5.0, 9.0]);
        assert_eq!(
            match_events(&same, &same, 1.0).unwrap(),
            MatchResult { n_matched: 3, insertions: 0, deletions: 0 }
        );
        assert_eq!(
            match_events(&ev(&[5.0, 10.0]), &ev(&[5.4]), 1.0).unwrap(),
            MatchResult { n_matched: 1, insertions: 0, deletions: 1 }
        );
        assert_eq!(
            match_events(&ev(&[]), &ev(&[3.0]), 1.0).unwrap(),
            MatchResult { n_matched: 0, insertions: 1, deletions: 0 }
        );
        // Nearest-candidate pairing would take 1.05 for the first event and
        // leave the second unmatched.
        assert_eq!(match_events(&ev(&[1.0, 1.9]), &ev(&[0.1, 1.05]), 1.0).unwrap().n_matched, 2);
        assert!(match_events(&same, &same, 0.0).is_err());
    }

    #[test]
    fn ber_examples() {
        assert_eq!(ber(&ev(&[1.0, 4.0]), &ev(&[1.0, 4.0]), 1.0).unwrap(), 0.0);
        assert_eq!(ber(&ev(&[5.0, 10.0]), &ev(&[5.4]), 1.0).unwrap(), 0.5);
        assert_eq!(ber(&ev(&[1.0, 2.0, 3.0, 4.0]), &ev(&[]), 1.0).unwrap(), 1.0);
        assert_eq!(ber(&ev(&[1.0]), &ev(&[10.0, 20.0, 30.0]), 1.0).unwrap(), 4.0);
        assert!(matches!(ber(&ev(&[]), &ev(&[1.0]), 1.0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn rr_error_summary() {
        let (mae, acc) = summarize_rr_errors(&[1.5, -2.5, 0.5, 3.0]);
        assert_eq!(mae, 1.875);
        assert_eq!(acc, 50.0);
        assert_eq!(summarize_rr_errors(&[2.0, -2.0]).1, 100.0);
    }

    #[test]
    fn perfect_estimates() {
        let target = sine(12.0, 30.0, 0.8);
        let seg = Segment {
            features: vec![],
            target: target.clone(),
            source_id: "u".into(),
            offset_s: 0.0,
        };
        let ev = evaluate_estimates(&[seg.clone(), seg], &[target.values().to_vec(), target.values().to_vec()]).unwrap();
        let r = ev.report;
        assert!((r.ccc - 1.0).abs() < 1e-12);
        assert_eq!((r.rmse, r.mae_bpm, r.acc_at_2bpm_pct, r.ber), (0.0, 0.0, 100.0, 0.0));
        assert_eq!(r.n_segments, 2);
    }

    #[test]
    fn csv_exports() {
        let rec = SegmentRecord {
            segment_id: "u@0".into(),
            ccc: 0.5,
            rmse: 0.1,
            rr_ref: 12.0,
            rr_est: 14.0,
            insertions: 1,
            deletions: 0,
            n_ref: 6,
        };
        let text = String::from_utf8(segments_csv(&[rec]).unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), "segment_id,ccc,rmse,rr_ref,rr_est,I,D,N");
        let t = String::from_utf8(trace_csv(&[0.1, 0.2], &[0.0, 0.3]).unwrap()).unwrap();
        assert_eq!(t, "frame,target,estimate\n0,0.1,0\n1,0.2,0.3\n");
    }

    proptest! {
        #[test]
        fn detection_is_affine_invariant(shift in -0.05f64..0.05, scale in 0.3f64..1.0, cpm in 5.0f64..19.0) {
            let base = sine(cpm, 30.0, 0.9);
            let moved = RespirationTrace::new(
                base.values().iter().map(|v| v * scale + shift).collect(),
                100.0,
            ).unwrap();
            let a = detect_breath_events(&base).unwrap();
            let b = detect_breath_events(&moved).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.inhale_times_s().iter().zip(b.inhale_times_s()) {
                prop_assert!((x - y).abs() <= 0.011);
            }
        }
    }
}
