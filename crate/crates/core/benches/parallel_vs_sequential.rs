//! Assembly, batch gradient and a training cell, each run on a one-thread
//! rayon pool and on the default pool. Build with `--no-default-features` to
//! time the sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nlreg::datagen::{make_dataset, Case, NoiseModel};
use nlreg::experiment::{run_cell, ExperimentConfig, Setup};
use nlreg::fem::{ForwardSystem, Mesh1D};
use nlreg::nonlocal::{NonlocalTensor, WeightGrid};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("1_thread", one), ("default_threads", all)]
}

fn bench(c: &mut Criterion) {
    let n = 64;
    let mesh = Mesh1D::new(n).unwrap();
    let grid = WeightGrid::uniform(n + 1, 1.0).unwrap();
    let cfg = ExperimentConfig {
        n_nodes: n,
        n_train: 16,
        batch_sizes: vec![1],
        s_values: vec![0.5],
        ..Default::default()
    };
    let setup = Setup::new(&cfg, 0.5).unwrap();
    let forward = ForwardSystem::assemble(&mesh, cfg.rho).unwrap();
    let data = make_dataset(Case::B, 64, &NoiseModel::default(), &forward, 0).unwrap();
    let sigma = setup.constant_weight(1.0).unwrap();

    let mut g = c.benchmark_group("parallel_vs_sequential");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("assemble_n64", name), |b| {
            b.iter(|| pool.install(|| NonlocalTensor::assemble(&mesh, &grid, 0.5).unwrap()))
        });
        let problem = setup.problem(&data.samples).unwrap();
        g.bench_function(BenchmarkId::new("gradient_64_samples", name), |b| {
            b.iter(|| pool.install(|| problem.gradient(&sigma).unwrap()))
        });
        g.bench_function(BenchmarkId::new("train_cell_16x1", name), |b| {
            b.iter(|| pool.install(|| run_cell(&setup, &data.samples[..16], None, 1).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
