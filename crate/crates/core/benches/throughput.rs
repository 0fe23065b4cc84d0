//! Sequential vs data-parallel throughput of the batch loops.
//!
//! `cargo bench -p wxcnn --bench throughput`. On a single core the two
//! should be about equal; the parallel path pays off with more cores.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use wxcnn::data::{build_synthetic_dataset_with, normalize, EventKind};
use wxcnn::network::{evaluate_with, preset_config, train_with, Network, SgdParams};
use wxcnn::{Execution, Rng};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn batch_loops(c: &mut Criterion) {
    let kind = EventKind::TropicalCyclone;
    let data = normalize(
        &build_synthetic_dataset_with(kind, 32, 32, &mut Rng::new(1), Execution::Sequential)
            .unwrap(),
    )
    .unwrap()
    .0;
    let net = Network::build(preset_config(kind), &mut Rng::new(2)).unwrap();
    let params = SgdParams {
        epochs: 1,
        batch_size: 32,
        ..SgdParams::box_midpoint()
    };

    let mut group = c.benchmark_group("tc_64");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("train_epoch", name), &exec, |b, &exec| {
            b.iter(|| {
                let mut net = net.clone();
                train_with(&mut net, &data, &data, &params, exec).unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("evaluate", name), &exec, |b, &exec| {
            b.iter(|| evaluate_with(&net, &data, exec).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("synthesize", name), &exec, |b, &exec| {
            b.iter(|| build_synthetic_dataset_with(kind, 32, 32, &mut Rng::new(1), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch_loops);
criterion_main!(benches);
