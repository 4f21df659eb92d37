//! Cross-correlation saliency of embedding dimensions against the respiration
//! trace, with a weighted redundancy term over the other dimensions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::{gemm, Mat, MatMut};
use crate::respiration::RespirationTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyReport {
    pub dims: usize,
    pub scores: Vec<f64>,
    pub base_corr: Vec<f64>,
    pub redundancy: Vec<f64>,
    pub n_utterances: usize,
}

/// Centres and scales `x` to unit population variance; constant input maps to zeros.
fn standardize(x: &[f64]) -> Vec<f64> {
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    let sd = var.sqrt();
    if sd > 0.0 && x.iter().any(|&v| v != x[0]) {
        x.iter().map(|v| (v - mean) / sd).collect()
    } else {
        vec![0.0; x.len()]
    }
}

/// Per-utterance `|rho(H_k, L)|` and `|rho(H_k, H_j)|` (row-major N x N).
fn abs_correlations(features: &FeatureMatrix, trace: &RespirationTrace) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = (features.frames(), features.dims());
    let mut z = vec![0.0; m * n];
    for k in 0..n {
        for (t, v) in standardize(&features.column(k).collect::<Vec<_>>()).into_iter().enumerate() {
            z[t * n + k] = v;
        }
    }
    let l = standardize(trace.values());
    let inv = 1.0 / m as f64;

    let mut to_trace = vec![0.0; n];
    gemm(inv, Mat::new(&z, m, n).t(), Mat::new(&l, m, 1), 0.0, MatMut::new(&mut to_trace, n, 1));
    let mut pairs = vec![0.0; n * n];
    gemm(inv, Mat::new(&z, m, n).t(), Mat::new(&z, m, n), 0.0, MatMut::new(&mut pairs, n, n));
    let clip = |v: &mut f64| *v = v.abs().min(1.0);
    to_trace.iter_mut().for_each(clip);
    pairs.iter_mut().for_each(clip);
    (to_trace, pairs)
}

pub fn saliency_scores(utterances: &[(FeatureMatrix, RespirationTrace)]) -> Result<SaliencyReport> {
    let Some((first, _)) = utterances.first() else {
        return Err(Error::Parameter("saliency needs at least one utterance".into()));
    };
    let n = first.dims();
    for (i, (f, t)) in utterances.iter().enumerate() {
        if f.dims() != n {
            return Err(Error::Shape(format!(
                "utterance {i} has {} dims, utterance 0 has {n}",
                f.dims()
            )));
        }
        if f.frames() != t.len() {
            return Err(Error::Alignment(format!(
                "utterance {i}: {} feature frames, {} trace frames",
                f.frames(),
                t.len()
            )));
        }
        if f.frames() < 2 {
            return Err(Error::Parameter(format!("utterance {i} has fewer than 2 frames")));
        }
    }

    let per_utt: Vec<(Vec<f64>, Vec<f64>)> = utterances
        .par_iter()
        .map(|(f, t)| abs_correlations(f, t))
        .collect();
    let u = utterances.len() as f64;
    let mut base = vec![0.0; n];
    let mut pairs = vec![0.0; n * n];
    for (b, p) in &per_utt {
        base.iter_mut().zip(b).for_each(|(a, v)| *a += v);
        pairs.iter_mut().zip(p).for_each(|(a, v)| *a += v);
    }
    base.iter_mut().for_each(|v| *v /= u);
    pairs.iter_mut().for_each(|v| *v /= u);

    let redundancy: Vec<f64> = (0..n)
        .map(|k| {
            if n == 1 {
                return 0.0;
            }
            let sum: f64 = (0..n)
                .filter(|&j| j != k)
                .map(|j| base[j] * pairs[k * n + j])
                .sum();
            sum / (n - 1) as f64
        })
        .collect();
    let scores = base.iter().zip(&redundancy).map(|(b, g)| b + g).collect();
    Ok(SaliencyReport {
        dims: n,
        scores,
        base_corr: base,
        redundancy,
        n_utterances: utterances.len(),
    })
}

/// Indices of the `ceil(p * N)` highest scores, ascending. Equal scores
/// prefer the lower index.
pub fn top_fraction(report: &SaliencyReport, p: f64) -> Result<Vec<usize>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Parameter(format!("fraction {p} must be in (0, 1]")));
    }
    let n = report.scores.len();
    let keep = ((p * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        report.scores[b]
            .total_cmp(&report.scores[a])
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = order.into_iter().take(keep.min(n)).collect();
    kept.sort_unstable();
    Ok(kept)
}
