use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speechbreath::features::{mfb, MfbConfig};
use speechbreath::model::{forward, init_params, loss_and_grad};
use speechbreath::saliency::saliency_scores;
use speechbreath::{AudioBuffer, FeatureKind, FeatureMatrix, ModelConfig, RespirationTrace, Segment};

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
}

fn features(rng: &mut ChaCha8Rng, frames: usize, dims: usize, kind: FeatureKind) -> FeatureMatrix {
    FeatureMatrix::new(noise(rng, frames * dims), frames, dims, 100.0, kind).unwrap()
}

fn segment(rng: &mut ChaCha8Rng, frames: usize) -> Segment {
    let target = RespirationTrace::new(noise(rng, frames), 100.0).unwrap();
    Segment::new(vec![features(rng, frames, 40, FeatureKind::Mfb)], target, "bench", 0.0).unwrap()
}

fn bench_mfb(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let audio = AudioBuffer::new(noise(&mut rng, 16_000 * 30), 16_000).unwrap();
    c.bench_function("mfb 30 s", |b| b.iter(|| mfb(&audio, MfbConfig::default()).unwrap()));
}

fn bench_model(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = init_params(&ModelConfig::new(&[40], 0)).unwrap();
    let x = vec![features(&mut rng, 3000, 40, FeatureKind::Mfb)];
    let batch: Vec<Segment> = (0..4).map(|_| segment(&mut rng, 3000)).collect();

    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function("forward 30 s", |b| b.iter(|| forward(&params, &x).unwrap()));
    group.bench_function("loss_and_grad 4 x 30 s", |b| {
        b.iter_batched(|| batch.clone(), |s| loss_and_grad(&params, &s).unwrap(), BatchSize::LargeInput)
    });
    group.finish();
}

fn bench_saliency(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs: Vec<(FeatureMatrix, RespirationTrace)> = (0..4)
        .map(|_| {
            (
                features(&mut rng, 1500, 768, FeatureKind::Embedding),
                RespirationTrace::new(noise(&mut rng, 1500), 50.0).unwrap(),
            )
        })
        .collect();
    let mut group = c.benchmark_group("saliency");
    group.sample_size(10);
    group.bench_function("768 dims x 4 utterances", |b| b.iter(|| saliency_scores(&inputs).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_mfb, bench_model, bench_saliency);
criterion_main!(benches);
