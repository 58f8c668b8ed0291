use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use heviper_bench::{bench_system, paper_scale_adapter, random_image, random_pool, random_unit_descriptor};
use heviper_core::adapter::adapter_forward;
use heviper_core::descriptor::{extract_descriptor_pair, gem_pool};
use heviper_core::retrieval::{he_vpr_query, knn};
use heviper_core::rng::SplitMix64;

fn bench_knn(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn");
    for &size in &[1_000usize, 10_000, 50_000] {
        let pool = random_pool(42, size, 192);
        let mut rng = SplitMix64::new(7);
        let query = random_unit_descriptor(&mut rng, 192);
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            b.iter(|| knn(black_box(&query), pool.iter(), 10).unwrap())
        });
    }
    group.finish();
}

fn bench_adapter_forward(c: &mut Criterion) {
    let (tokens, params) = paper_scale_adapter(3);
    c.bench_function("adapter_forward/577x192_b64", |b| {
        b.iter(|| adapter_forward(black_box(&tokens), &params).unwrap())
    });
}

fn bench_gem_pool(c: &mut Criterion) {
    let (tokens, _) = paper_scale_adapter(5);
    c.bench_function("gem_pool/577x192_p3", |b| {
        b.iter(|| gem_pool(black_box(&tokens), 3.0).unwrap())
    });
}

fn bench_descriptor_pair(c: &mut Criterion) {
    let system = bench_system(11, 8, 25, 192);
    let image = random_image(9, 168);
    let mut group = c.benchmark_group("descriptor_pair");
    group.sample_size(10);
    group.bench_function("168px_L4_D192", |b| {
        b.iter(|| {
            extract_descriptor_pair(
                black_box(&image),
                &system.stub,
                &system.he_params,
                &system.vpr_params,
                system.gem_p,
                system.aggregator,
            )
            .unwrap()
        })
    });
    group.finish();
}

fn bench_he_vpr_query(c: &mut Criterion) {
    let system = bench_system(13, 8, 25, 192);
    let image = random_image(21, 168);
    let mut group = c.benchmark_group("he_vpr_query");
    group.sample_size(10);
    group.bench_function("k1_200_entries", |b| {
        b.iter(|| he_vpr_query(black_box(&image), &system, 1, 10).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_knn,
    bench_adapter_forward,
    bench_gem_pool,
    bench_descriptor_pair,
    bench_he_vpr_query
);
criterion_main!(benches);
