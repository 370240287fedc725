use criterion::{criterion_group, criterion_main, Criterion};
use meanflow_bench::fixture;
use meanflow_core::net;
use meanflow_core::sampler::{euler_multi_step, one_step_extract, NetField};
use std::hint::black_box;

fn bench(c: &mut Criterion) {
    let fx = fixture();
    let lambda = fx.example.lambda;
    c.bench_function("net_forward", |b| {
        b.iter(|| net::forward(&fx.params, black_box(&fx.y), 0.4, 0.8, &fx.emb).unwrap())
    });
    c.bench_function("net_forward_backward", |b| {
        b.iter(|| {
            let (v, cache) = net::forward_cached(&fx.params, black_box(&fx.y), 0.4, 0.8, &fx.emb).unwrap();
            net::backward(&fx.params, &cache, &v).unwrap()
        })
    });
    let field = NetField {
        params: &fx.params,
        emb: &fx.emb,
    };
    c.bench_function("one_step_extract", |b| {
        b.iter(|| one_step_extract(&field, black_box(&fx.y), lambda).unwrap())
    });
    c.bench_function("euler_nfe4", |b| {
        b.iter(|| euler_multi_step(&field, black_box(&fx.y), lambda, 4).unwrap())
    });
}

criterion_group!(benches, bench);
criterion_main!(benches);
