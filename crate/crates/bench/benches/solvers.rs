use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use tof_bench::cover_instance;
use tof_core::fixtures::benchmark_instance;
use tof_core::wdic::{lp_round_with, solve_greedy, solve_ilp, solve_lp};

fn random_instances(c: &mut Criterion) {
    let mut group = c.benchmark_group("random");
    for (intents, sets) in [(20, 40), (60, 150)] {
        let inst = cover_instance(11, intents, sets);
        let id = format!("{intents}x{sets}");
        group.bench_with_input(BenchmarkId::new("greedy", &id), &inst, |b, i| b.iter(|| solve_greedy(black_box(i)).unwrap()));
        group.bench_with_input(BenchmarkId::new("lp", &id), &inst, |b, i| b.iter(|| solve_lp(black_box(i)).unwrap()));
        group.bench_with_input(BenchmarkId::new("ilp", &id), &inst, |b, i| b.iter(|| solve_ilp(black_box(i)).unwrap()));
        let lp = solve_lp(&inst).unwrap();
        group.bench_with_input(BenchmarkId::new("lp-rounding", &id), &inst, |b, i| {
            let mut seed = 0;
            b.iter(|| {
                seed += 1;
                lp_round_with(black_box(i), &lp, seed).unwrap()
            })
        });
    }
    group.finish();
}

fn benchmark_scale(c: &mut Criterion) {
    let inst = benchmark_instance(264);
    let mut group = c.benchmark_group("benchmark-264");
    group.sample_size(10);
    group.bench_function("greedy", |b| b.iter(|| solve_greedy(black_box(&inst)).unwrap()));
    group.bench_function("lp", |b| b.iter(|| solve_lp(black_box(&inst)).unwrap()));
    let lp = solve_lp(&inst).unwrap();
    group.bench_function("lp-rounding", |b| b.iter(|| lp_round_with(black_box(&inst), &lp, 3).unwrap()));
    group.finish();
}

criterion_group!(benches, random_instances, benchmark_scale);
criterion_main!(benches);
