use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mmembed_bench::{candidate_pool, embedding_batch, matrix, source_table, training_fixture};
use mmembed_core::{
    direct_backprop, grad_cache_run, info_nce_backward, rank_candidates, similarity_matrix,
    BatchSampler, LossConfig, SamplingPlan,
};

fn similarity(c: &mut Criterion) {
    let mut g = c.benchmark_group("similarity_matrix");
    for n in [64, 256, 1024] {
        let q = matrix(1, n, 64);
        let t = matrix(2, n, 64);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| similarity_matrix(black_box(&q), black_box(&t)).unwrap())
        });
    }
    g.finish();
}

fn info_nce(c: &mut Criterion) {
    let cfg = LossConfig::with_temperature(0.02);
    let mut g = c.benchmark_group("info_nce_backward");
    for n in [64, 256, 1024] {
        let batch = embedding_batch(n, 64);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| info_nce_backward(black_box(&batch), &cfg).unwrap())
        });
    }
    g.finish();
}

fn grad_cache(c: &mut Criterion) {
    let cfg = LossConfig::with_temperature(0.02);
    let (enc, batch) = training_fixture(256, 64, 128, 32);
    let mut g = c.benchmark_group("grad_cache_256");
    g.bench_function("direct", |b| {
        b.iter(|| direct_backprop(&enc, black_box(&batch), &cfg).unwrap())
    });
    for chunk in [16, 64, 256] {
        g.bench_with_input(BenchmarkId::new("chunked", chunk), &chunk, |b, &chunk| {
            b.iter(|| grad_cache_run(&enc, black_box(&batch), chunk, &cfg).unwrap())
        });
    }
    g.finish();
}

fn ranking(c: &mut Criterion) {
    let mut g = c.benchmark_group("rank_candidates");
    for m in [100, 1000, 10_000] {
        let pool = candidate_pool(m, 64);
        let q = matrix(7, 1, 64);
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| rank_candidates(black_box(q.row(0)), &pool).unwrap())
        });
    }
    g.finish();
}

fn sampling(c: &mut Criterion) {
    let table = source_table(20, 4096);
    let mut g = c.benchmark_group("sampler_next_batch");
    for sub in [0, 64] {
        let plan = SamplingPlan::new(1024, sub, 1).unwrap();
        let mut sampler = BatchSampler::new(plan, &table).unwrap();
        g.bench_with_input(BenchmarkId::new("sub_batch", sub), &sub, |b, _| {
            b.iter(|| sampler.next_batch())
        });
    }
    g.finish();
}

criterion_group!(benches, similarity, info_nce, grad_cache, ranking, sampling);
criterion_main!(benches);
