use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use depthstyle::features::{conv3x3_reflect, conv3x3_reflect_transpose};
use depthstyle::{gram, total_loss, Extractor, ExtractorSpec, LossWeights, Targets, Tensor3, XorShift64Star};

fn random(c: usize, h: usize, w: usize, seed: u64) -> Tensor3 {
    let mut rng = XorShift64Star::new(seed);
    Tensor3::from_fn(c, h, w, |_, _, _| rng.next_f32())
}

fn conv(c: &mut Criterion) {
    let x = random(8, 64, 64, 1);
    let w: Vec<f32> = (0..16 * 8 * 9).map(|i| ((i % 11) as f32 - 5.0) / 20.0).collect();
    let b = vec![0.1f32; 16];
    c.bench_function("conv3x3_reflect 8->16 64x64", |bch| {
        bch.iter(|| conv3x3_reflect(black_box(&x), &w, &b).unwrap())
    });
    let g = random(16, 64, 64, 2);
    c.bench_function("conv3x3_reflect_transpose 16->8 64x64", |bch| {
        bch.iter(|| conv3x3_reflect_transpose(black_box(&g), 8, &w, 16).unwrap())
    });
}

fn gram_bench(c: &mut Criterion) {
    let f = random(16, 64, 64, 3);
    c.bench_function("gram 16x64x64", |bch| bch.iter(|| gram(black_box(&f))));
}

fn loss(c: &mut Criterion) {
    let extractor = Extractor::tiny();
    let spec = ExtractorSpec::tiny();
    let content = random(3, 64, 64, 4);
    let style = random(3, 64, 64, 5);
    let targets = Targets::compute(&extractor, &spec, &content, &style).unwrap();
    let weights = LossWeights::default();
    c.bench_function("total_loss tiny 64x64", |bch| {
        bch.iter(|| total_loss(black_box(&content), &targets, &weights, &extractor, &spec, None).unwrap())
    });
}

criterion_group!(benches, conv, gram_bench, loss);
criterion_main!(benches);
