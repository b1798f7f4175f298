//! Engine throughput on a single thread versus the default rayon pool.
//!
//! Build with `--no-default-features` to benchmark the sequential code path;
//! both groups then run the same loop.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqmct::baselines::{naive_run, NaiveConfig};
use seqmct::confidence::clopper_pearson;
use seqmct::harness::BernoulliOracle;
use seqmct::{engine, EngineConfig, PValues};

fn population(m: usize) -> PValues {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    PValues::new(
        (0..m)
            .map(|i| {
                if i % 5 == 0 {
                    rng.random::<f64>() * 1e-3
                } else {
                    rng.random()
                }
            })
            .collect(),
    )
    .unwrap()
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("1 thread", one), ("default pool", all)]
}

fn engine_runs(c: &mut Criterion) {
    let mut group = c.benchmark_group("engine");
    group.sample_size(10);
    for m in [200, 2000] {
        let source = BernoulliOracle::new(population(m), 3);
        let cfg = EngineConfig {
            max_undecided: m / 100,
            max_effort: Some(200 * m as u64 * 1000),
            ..Default::default()
        };
        for (name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(name, m), &m, |b, _| {
                b.iter(|| pool.install(|| engine::run(cfg, &source).unwrap()))
            });
        }
    }
    group.finish();
}

fn naive_runs(c: &mut Criterion) {
    let mut group = c.benchmark_group("naive");
    group.sample_size(10);
    let source = BernoulliOracle::new(population(1000), 5);
    let cfg = NaiveConfig::new(10_000, EngineConfig::default().procedure).unwrap();
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| pool.install(|| naive_run(&cfg, &source).unwrap()))
        });
    }
    group.finish();
}

fn intervals(c: &mut Criterion) {
    c.bench_function("clopper_pearson k=10000", |b| {
        b.iter(|| {
            (0..=10_000u64)
                .step_by(97)
                .map(|s| clopper_pearson(s, 10_000, 1e-9).unwrap().width())
                .sum::<f64>()
        })
    });
}

criterion_group!(benches, engine_runs, naive_runs, intervals);
criterion_main!(benches);
