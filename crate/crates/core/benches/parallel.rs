//! Worker-pool comparison for the data-parallel stages. `workers = 1` is the
//! sequential reference; build with `--no-default-features` to drop rayon.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use taa_core::gnr::{solve_vessel, SolverSettings};
use taa_core::grf::{make_insult_pair, sample_field, GrfConfig};
use taa_core::par::{is_parallel, with_workers};
use taa_core::pipeline::{generate_samples, GenerateConfig};
use taa_core::wall::WallModel;

fn worker_counts() -> Vec<usize> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut w = vec![1];
    if is_parallel() && cores > 1 {
        w.push(cores);
    }
    w
}

fn vessel_solve(c: &mut Criterion) {
    let field = sample_field(&GrfConfig { seed: 3, ..Default::default() }).unwrap();
    let pair = make_insult_pair(&field, 2, 0.5).unwrap();
    let model = WallModel::default();
    let settings = SolverSettings::default();
    let mut g = c.benchmark_group("solve_vessel");
    g.sample_size(10);
    for w in worker_counts() {
        g.bench_with_input(BenchmarkId::from_parameter(w), &w, |b, &w| {
            b.iter(|| with_workers(w, || solve_vessel(&pair, &model, &settings).unwrap()))
        });
    }
    g.finish();
}

fn generation(c: &mut Criterion) {
    let cfg = GenerateConfig { profiles: 2, combos: 5, ..Default::default() };
    let mut g = c.benchmark_group("generate_10_samples");
    g.sample_size(10);
    for w in worker_counts() {
        g.bench_with_input(BenchmarkId::from_parameter(w), &w, |b, &w| {
            b.iter(|| with_workers(w, || generate_samples(&cfg).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, vessel_solve, generation);
criterion_main!(benches);
