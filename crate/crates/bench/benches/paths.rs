use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use tof_bench::layered_chart;
use tof_core::fixtures::account_inquiry;
use tof_core::paths::{enumerate_paths, sample_paths, EnumerateOptions, TercileSampler};

fn enumeration(c: &mut Criterion) {
    let mut group = c.benchmark_group("enumerate");
    let reference = account_inquiry();
    for budget in [0, 1, 2] {
        let opts = EnumerateOptions { revisit_budget: budget, ..Default::default() };
        group.bench_with_input(BenchmarkId::new("account-inquiry", budget), &opts, |b, o| {
            b.iter(|| enumerate_paths(black_box(&reference), *o).unwrap())
        });
    }
    for (layers, width) in [(4, 3), (6, 4)] {
        let chart = layered_chart(5, layers, width);
        let opts = EnumerateOptions { revisit_budget: 0, ..Default::default() };
        group.bench_with_input(BenchmarkId::new("layered", format!("{layers}x{width}")), &chart, |b, ch| {
            b.iter(|| enumerate_paths(black_box(ch), opts).unwrap())
        });
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let chart = layered_chart(5, 6, 4);
    let paths = enumerate_paths(&chart, EnumerateOptions { revisit_budget: 0, ..Default::default() }).unwrap();
    c.bench_function("tercile-sample-20", |b| {
        b.iter(|| sample_paths(black_box(&paths), 20, 7, &TercileSampler).unwrap())
    });
}

criterion_group!(benches, enumeration, sampling);
criterion_main!(benches);
