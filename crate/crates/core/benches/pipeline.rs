//! Data-parallel core against a plain sequential loop over the same work.
//!
//! With `--no-default-features` the "parallel" entries also run sequentially,
//! which gives the fallback's cost directly.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng as _;

use sdi_core::model::{ModelConfig, SdiModel};
use sdi_core::stats::{auroc, Bootstrap};
use sdi_core::synth::{gen_night, SynthProfile};
use sdi_core::{par, rng};

fn inference(c: &mut Criterion) {
    let night = gen_night(&SynthProfile { n_epochs: 32, seed: 1, ..SynthProfile::default() }).unwrap();
    let grid = night.to_grid().unwrap();
    let model = SdiModel::new(ModelConfig::desk(), 2).unwrap();
    let epochs: Vec<&[f32]> = (0..grid.len()).map(|i| grid.epoch(i)).collect();
    let mut g = c.benchmark_group("predict_32_epochs");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("parallel", par::is_parallel()), |b| {
        b.iter(|| model.predict_batch(&epochs).unwrap())
    });
    g.bench_function("sequential", |b| {
        b.iter(|| epochs.iter().map(|e| model.predict(e).unwrap()).collect::<Vec<_>>())
    });
    g.finish();
}

fn bootstrap(c: &mut Criterion) {
    let mut r = rng::seeded(3);
    let n = 2000;
    let labels: Vec<bool> = (0..n).map(|i| i % 5 == 0).collect();
    let scores: Vec<f64> = labels.iter().map(|&l| r.random::<f64>() + if l { 0.5 } else { 0.0 }).collect();
    let stat = |ix: &[usize]| {
        let s: Vec<f64> = ix.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = ix.iter().map(|&i| labels[i]).collect();
        auroc(&s, &l).ok()
    };
    let replicates = 200;
    let mut g = c.benchmark_group("auroc_bootstrap_200");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("parallel", par::is_parallel()), |b| {
        b.iter(|| Bootstrap::run(n, replicates, 9, stat).unwrap())
    });
    g.bench_function("sequential", |b| {
        b.iter(|| {
            (0..replicates)
                .filter_map(|k| {
                    let mut g = rng::stream(9, k as u64);
                    let pick: Vec<usize> = (0..n).map(|_| g.random_range(0..n)).collect();
                    stat(&pick)
                })
                .collect::<Vec<_>>()
        })
    });
    g.finish();
}

criterion_group!(benches, inference, bootstrap);
criterion_main!(benches);
