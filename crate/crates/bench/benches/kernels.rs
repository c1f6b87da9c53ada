//! Microbenchmarks for the training hot path: height binning, balanced
//! sampling, the loss kernels, and one full model forward pass.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use weakheight_bench::fixture_patch;
use weakheight_core::ensemble::EnsembleModel;
use weakheight_core::heightbins::{balanced_pair_sample, balanced_pixel_sample, SidBins};
use weakheight_core::losses::{ordinal_constraint_loss, soft_height_loss_at};
use weakheight_core::presets::benchmark_model_config;

fn bench_kernels(c: &mut Criterion) {
    let patch = fixture_patch();
    let heights32 = patch.height.as_slice().expect("standard layout").to_vec();
    let heights: Vec<f64> = heights32.iter().map(|h| f64::from(*h)).collect();
    let preds: Vec<f64> = heights.iter().map(|h| h * 1.07 + 0.4).collect();
    let bins = SidBins::new(1.0, 150.0, 20).expect("valid bins");
    let classes = bins.class_map(&heights32).expect("finite heights");
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let indices = balanced_pixel_sample(&heights, 0.10, &mut rng).expect("non-empty map");
    let pairs = balanced_pair_sample(&classes, 4096, &mut rng);

    c.bench_function("sid_class_map_64x64", |b| {
        b.iter(|| bins.class_map(black_box(&heights32)).unwrap())
    });
    c.bench_function("balanced_pixel_sample_64x64", |b| {
        b.iter(|| balanced_pixel_sample(black_box(&heights), 0.10, &mut rng).unwrap())
    });
    c.bench_function("balanced_pair_sample_64x64_budget_4096", |b| {
        b.iter(|| balanced_pair_sample(black_box(&classes), 4096, &mut rng))
    });
    c.bench_function("soft_height_loss_410_pixels", |b| {
        b.iter(|| soft_height_loss_at(black_box(&preds), &heights, 0.3, &indices).unwrap())
    });
    c.bench_function("ordinal_loss_4096_pairs", |b| {
        b.iter(|| ordinal_constraint_loss(black_box(&preds), &pairs))
    });
}

fn bench_forward(c: &mut Criterion) {
    let patch = fixture_patch();
    let model = EnsembleModel::new(benchmark_model_config(), 0).expect("valid config");
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function("forward_64x64_three_branches", |b| {
        b.iter(|| model.forward_one(black_box(&patch.image)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_kernels, bench_forward);
criterion_main!(benches);
