use calsim::batch::{kleene_stars, random_matrices, sweep_seeds, Exec, MatrixDist};
use calsim::scenarios::builtin;
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn seed_sweep(c: &mut Criterion) {
    let cfg = builtin("bulletin-logical-decentral").unwrap().config;
    let seeds: Vec<u64> = (0..64).collect();
    let mut g = c.benchmark_group("seed_sweep");
    for (name, exec) in EXECS {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| sweep_seeds(exec, &cfg, black_box(&seeds), |_, t| t.records.len()))
        });
    }
    g.finish();
}

fn matrices(c: &mut Criterion) {
    let d = MatrixDist { n: 12, hi: -1, ..MatrixDist::default() };
    let ms = random_matrices(Exec::Parallel, 1, 512, &d);
    let mut g = c.benchmark_group("kleene_star");
    for (name, exec) in EXECS {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| b.iter(|| kleene_stars(exec, black_box(&ms))));
    }
    g.finish();

    let mut g = c.benchmark_group("random_matrices");
    for (name, exec) in EXECS {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| random_matrices(exec, black_box(7), 256, &MatrixDist::default()))
        });
    }
    g.finish();
}

criterion_group!(benches, seed_sweep, matrices);
criterion_main!(benches);
