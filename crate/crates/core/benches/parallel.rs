//! Data-parallel vs sequential execution of independent fold jobs.
//!
//! Run with the default features for the rayon path; rerun with
//! `--no-default-features` to measure the sequential build of `map_jobs`
//! itself. `map_jobs_seq` is always sequential and serves as the in-build
//! baseline.

use criterion::{criterion_group, criterion_main, Criterion};

use coxmt::data::{generate_synthetic, SynthConfig};
use coxmt::exec;
use coxmt::experiment::{train_cox_mt, TrainConfig};

fn bench_fold_jobs(c: &mut Criterion) {
    let (ds, _) = generate_synthetic(&SynthConfig {
        n_samples: 120,
        dim: 8,
        censor_fraction: 0.3,
        unlabeled_fraction: 0.25,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap();
    let all: Vec<usize> = (0..ds.n()).collect();
    let base = TrainConfig {
        epochs: 8,
        lr: 5e-3,
        hidden: vec![8],
        patience: 0,
        ..TrainConfig::default()
    };
    let jobs: Vec<u64> = (0..8).collect();
    let run_one = |seed: u64| {
        let cfg = TrainConfig {
            seed,
            ..base.clone()
        };
        train_cox_mt(&ds, &all, &[], &cfg)
            .unwrap()
            .trace
            .last()
            .unwrap()
            .loss
    };

    let mut group = c.benchmark_group("fold_jobs");
    group.sample_size(10);
    group.bench_function("map_jobs", |b| {
        b.iter(|| exec::map_jobs(jobs.clone(), run_one))
    });
    group.bench_function("map_jobs_seq", |b| {
        b.iter(|| exec::map_jobs_seq(jobs.clone(), run_one))
    });
    group.finish();
}

criterion_group!(benches, bench_fold_jobs);
criterion_main!(benches);
