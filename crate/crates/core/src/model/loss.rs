//! Batch-level entry points: prediction, loss and gradients over segments.
//!
//! Segments are processed in chunks of at most [`CHUNK_SEGMENTS`] equal-length
//! sequences. Chunks may run in parallel; their results are always reduced in
//! chunk order, so outputs do not depend on the thread count.

use rayon::prelude::*;

use super::ccc::{ccc_with_grad, CccStats};
use super::network::{self, Batch};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::segment::Segment;

pub const CHUNK_SEGMENTS: usize = 8;

fn check_branches(params: &ModelParams, features: &[FeatureMatrix]) -> Result<usize> {
    let cfg = params.config();
    if features.len() != cfg.branches.len() {
        return Err(Error::Shape(format!(
            "{} feature branches for a {}-branch model",
            features.len(),
            cfg.branches.len()
        )));
    }
    let frames = features[0].frames();
    for (i, (f, b)) in features.iter().zip(&cfg.branches).enumerate() {
        if f.dims() != b.input_dims {
            return Err(Error::Shape(format!(
                "branch {i} has {} dims, model expects {}",
                f.dims(),
                b.input_dims
            )));
        }
        if f.frames() != frames {
            return Err(Error::Alignment(format!(
                "branch {i} has {} frames, branch 0 has {frames}",
                f.frames()
            )));
        }
    }
    if frames == 0 {
        return Err(Error::Shape("empty feature matrix".into()));
    }
    Ok(frames)
}

/// Model output for one utterance, one value per frame.
pub fn forward(params: &ModelParams, features: &[FeatureMatrix]) -> Result<Vec<f64>> {
    let frames = check_branches(params, features)?;
    let batch = Batch {
        frames,
        size: 1,
        branches: features.iter().map(|f| f.data().to_vec()).collect(),
    };
    Ok(network::forward(params, &batch).output)
}

/// Post-ReLU embedding activations for one utterance, `frames x embed_units`
/// row-major. The zero pattern marks where the loss is not differentiable.
pub fn embedding_activations(params: &ModelParams, features: &[FeatureMatrix]) -> Result<Vec<f64>> {
    let frames = check_branches(params, features)?;
    let batch = Batch {
        frames,
        size: 1,
        branches: features.iter().map(|f| f.data().to_vec()).collect(),
    };
    Ok(network::forward(params, &batch).embed)
}

/// Consecutive runs of equal frame count, at most `CHUNK_SEGMENTS` long.
fn chunk(indices: &[usize], segments: &[Segment]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for &i in indices {
        match out.last_mut() {
            Some(last)
                if last.len() < CHUNK_SEGMENTS
                    && segments[last[0]].frames() == segments[i].frames() =>
            {
                last.push(i)
            }
            _ => out.push(vec![i]),
        }
    }
    out
}

fn build_batch(segments: &[Segment], chunk: &[usize]) -> Batch {
    let dims: Vec<usize> = segments[chunk[0]].features.iter().map(|f| f.dims()).collect();
    let seqs: Vec<Vec<&[f64]>> = chunk
        .iter()
        .map(|&i| segments[i].features.iter().map(|f| f.data()).collect())
        .collect();
    Batch::interleave(&seqs, &dims, segments[chunk[0]].frames())
}

pub(crate) fn validate(params: &ModelParams, segments: &[Segment]) -> Result<()> {
    for (i, s) in segments.iter().enumerate() {
        let frames = check_branches(params, &s.features)
            .map_err(|e| Error::Shape(format!("segment {i}: {e}")))?;
        if frames != s.frames() {
            return Err(Error::Alignment(format!(
                "segment {i}: {frames} feature frames, {} target frames",
                s.frames()
            )));
        }
    }
    Ok(())
}

/// Model outputs for each segment, in input order.
pub fn predict(params: &ModelParams, segments: &[Segment]) -> Result<Vec<Vec<f64>>> {
    validate(params, segments)?;
    let all: Vec<usize> = (0..segments.len()).collect();
    Ok(predict_indices(params, segments, &all))
}

fn predict_indices(params: &ModelParams, segments: &[Segment], indices: &[usize]) -> Vec<Vec<f64>> {
    let chunks = chunk(indices, segments);
    let per_chunk: Vec<Vec<Vec<f64>>> = chunks
        .par_iter()
        .map(|c| {
            let batch = build_batch(segments, c);
            let out = network::forward(params, &batch).output;
            (0..c.len())
                .map(|b| (0..batch.frames).map(|t| out[t * c.len() + b]).collect())
                .collect()
        })
        .collect();
    per_chunk.into_iter().flatten().collect()
}

/// Segments whose target has non-zero variance; the rest are skipped with a warning.
fn usable(segments: &[Segment], subset: &[usize]) -> Vec<usize> {
    subset
        .iter()
        .filter_map(|&i| {
            let s = &segments[i];
            let t = s.target.values();
            if t.len() >= 2 && t.iter().any(|&v| v != t[0]) {
                Some(i)
            } else {
                log::warn!(
                    "skipping segment {i} ({} @ {:.1} s): constant target",
                    s.source_id,
                    s.offset_s
                );
                None
            }
        })
        .collect()
}

/// Mean of `1 - CCC(prediction, target)` over usable segments, with its
/// gradient for every parameter.
pub fn loss_and_grad(params: &ModelParams, segments: &[Segment]) -> Result<(f64, ModelParams)> {
    validate(params, segments)?;
    let all: Vec<usize> = (0..segments.len()).collect();
    loss_and_grad_subset(params, segments, &all)
}

/// Loss and gradient over `segments[i]` for `i` in `subset`; shapes must
/// already have been checked with [`validate`].
pub(crate) fn loss_and_grad_subset(
    params: &ModelParams,
    segments: &[Segment],
    subset: &[usize],
) -> Result<(f64, ModelParams)> {
    let keep = usable(segments, subset);
    if keep.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let scale = 1.0 / keep.len() as f64;
    let chunks = chunk(&keep, segments);
    let parts: Vec<(f64, ModelParams)> = chunks
        .par_iter()
        .map(|c| -> Result<(f64, ModelParams)> {
            let batch = build_batch(segments, c);
            let cache = network::forward(params, &batch);
            let (frames, size) = (batch.frames, batch.size);
            let mut d_out = vec![0.0; frames * size];
            let mut total = 0.0;
            for (b, &i) in c.iter().enumerate() {
                let y: Vec<f64> = (0..frames).map(|t| cache.output[t * size + b]).collect();
                let (value, grad) = ccc_with_grad(&y, segments[i].target.values());
                total += 1.0 - value;
                for (t, g) in grad.into_iter().enumerate() {
                    d_out[t * size + b] = -g * scale;
                }
            }
            let mut grads = ModelParams::zeros(params.config())?;
            network::backward(params, &batch, &cache, &d_out, &mut grads);
            Ok((total, grads))
        })
        .collect::<Result<_>>()?;

    let mut parts = parts.into_iter();
    let (mut total, mut grads) = parts.next().expect("at least one chunk");
    for (l, g) in parts {
        total += l;
        grads.add_assign(&g);
    }
    Ok((total * scale, grads))
}

/// Loss without gradients.
pub fn loss(params: &ModelParams, segments: &[Segment]) -> Result<f64> {
    validate(params, segments)?;
    let all: Vec<usize> = (0..segments.len()).collect();
    let keep = usable(segments, &all);
    if keep.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let outputs = predict_indices(params, segments, &keep);
    let total: f64 = outputs
        .iter()
        .zip(&keep)
        .map(|(y, &i)| 1.0 - CccStats::compute_unchecked(y, segments[i].target.values()).ccc())
        .sum();
    Ok(total / keep.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use crate::model::{init_params, BranchConfig, ModelConfig};
    use crate::respiration::RespirationTrace;

    fn tiny_config(width: usize) -> ModelConfig {
        ModelConfig {
            branches: vec![BranchConfig::with_width(3, width), BranchConfig::with_width(2, width)],
            lstm_layers: 2,
            lstm_units: 3,
            embed_units: 4,
            seed: 5,
        }
    }

    fn seg(frames: usize, phase: f64) -> Segment {
        let f = |d: usize, k: f64| {
            FeatureMatrix::new(
                (0..frames * d)
                    .map(|i| ((i as f64) * k + phase).sin())
                    .collect(),
                frames,
                d,
                100.0,
                FeatureKind::Mfb,
            )
            .unwrap()
        };
        let t = RespirationTrace::new(
            (0..frames)
                .map(|i| 0.8 * ((i as f64) * 0.9 + phase).cos())
                .collect(),
            100.0,
        )
        .unwrap();
        Segment::new(vec![f(3, 0.37), f(2, 1.3)], t, "s", 0.0).unwrap()
    }

    fn check_gradient(width: usize, segments: &[Segment]) {
        let params = init_params(&tiny_config(width)).unwrap();
        let (_, grads) = loss_and_grad(&params, segments).unwrap();
        let names = params.tensor_names();
        let h = 1e-6;
        for (ti, name) in names.iter().enumerate() {
            let n = params.tensors()[ti].len();
            for k in 0..n {
                let mut plus = params.clone();
                plus.tensors_mut()[ti].data_mut()[k] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[ti].data_mut()[k] -= h;
                let fd = (loss(&plus, segments).unwrap() - loss(&minus, segments).unwrap()) / (2.0 * h);
                let an = grads.tensors()[ti].data()[k];
                assert!(
                    (fd - an).abs() < 1e-6 * (1.0 + fd.abs()),
                    "{name}[{k}]: analytic {an}, numeric {fd}"
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        check_gradient(5, &[seg(9, 0.0), seg(9, 0.7), seg(9, 1.9)]);
    }

    #[test]
    fn gradient_with_narrow_kernel_and_mixed_lengths() {
        check_gradient(3, &[seg(6, 0.2), seg(4, 1.1)]);
    }

    #[test]
    fn batched_prediction_matches_single_sequences() {
        let params = init_params(&tiny_config(5)).unwrap();
        let segs: Vec<Segment> = (0..11).map(|i| seg(12, i as f64 * 0.3)).collect();
        let batched = predict(&params, &segs).unwrap();
        for (s, y) in segs.iter().zip(&batched) {
            let single = forward(&params, &s.features).unwrap();
            for (a, b) in single.iter().zip(y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_is_mean_of_per_segment_terms() {
        let params = init_params(&tiny_config(5)).unwrap();
        let segs = [seg(10, 0.0), seg(10, 2.0)];
        let per: Vec<f64> = segs
            .iter()
            .map(|s| {
                let y = forward(&params, &s.features).unwrap();
                1.0 - crate::model::ccc(&y, s.target.values()).unwrap()
            })
            .collect();
        let expected = (per[0] + per[1]) / 2.0;
        assert!((loss(&params, &segs).unwrap() - expected).abs() < 1e-12);
        let (l, _) = loss_and_grad(&params, &segs).unwrap();
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_targets_are_skipped() {
        let params = init_params(&tiny_config(5)).unwrap();
        let mut flat = seg(10, 0.0);
        flat.target = RespirationTrace::new(vec![0.3; 10], 100.0).unwrap();
        let good = seg(10, 1.0);
        let both = loss(&params, &[flat.clone(), good.clone()]).unwrap();
        assert_eq!(both, loss(&params, &[good]).unwrap());
        assert!(matches!(loss_and_grad(&params, &[flat]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn wrong_branch_shape_is_rejected() {
        let params = init_params(&tiny_config(5)).unwrap();
        let mut s = seg(10, 0.0);
        s.features.pop();
        assert!(matches!(predict(&params, &[s]), Err(Error::Shape(_))));
    }

    #[test]
    fn embedding_activations_shape_and_sign() {
        let params = init_params(&tiny_config(3)).unwrap();
        let s = seg(7, 0.2);
        let a = embedding_activations(&params, &s.features).unwrap();
        assert_eq!(a.len(), 7 * 4);
        assert!(a.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn forward_is_pure() {
        let params = init_params(&tiny_config(5)).unwrap();
        let s = seg(15, 0.4);
        let a = forward(&params, &s.features).unwrap();
        let b = forward(&params, &s.features).unwrap();
        assert_eq!(a, b);
    }

    proptest::proptest! {
        #[test]
        fn zeroed_branch_is_ignored(noise in proptest::collection::vec(-3.0f64..3.0, 24), which in 0usize..2) {
            let mut params = init_params(&tiny_config(3)).unwrap();
            params.conv[which].kernel.data_mut().fill(0.0);
            params.conv[which].bias.data_mut().fill(0.0);
            let s = seg(12, 0.9);
            let mut perturbed = s.features.clone();
            let m = &s.features[which];
            let data = m.data().iter().zip(noise.iter().cycle()).map(|(v, e)| v + e).collect();
            perturbed[which] = FeatureMatrix::new(data, m.frames(), m.dims(), 100.0, FeatureKind::Mfb).unwrap();
            let a = forward(&params, &s.features).unwrap();
            let b = forward(&params, &perturbed).unwrap();
            proptest::prop_assert_eq!(a, b);
        }
    }
}
