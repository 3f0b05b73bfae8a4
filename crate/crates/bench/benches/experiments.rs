//! Experiment-level benchmarks: Monte-Carlo throughput, sparsity encoding
//! and a small hybrid layer forward.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use pacsim_core::analysis::rmse_experiment;
use pacsim_core::encoder::EncoderState;
use pacsim_core::inference::generator::{eval_input_codes, generate_network, GenConfig};
use pacsim_core::inference::RunOptions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bench_rmse_trials(c: &mut Criterion) {
    let mut group = c.benchmark_group("rmse_experiment");
    group.sample_size(10);
    for n in [256usize, 1024] {
        let trials = 2_000u64;
        group.throughput(Throughput::Elements(trials));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| rmse_experiment(n, 0.3, 0.5, trials, black_box(42)).unwrap())
        });
    }
    group.finish();
}

fn bench_encoder(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let values: Vec<u8> = (0..4096).map(|_| rng.random()).collect();
    let mut group = c.benchmark_group("encoder");
    group.throughput(Throughput::Bytes(values.len() as u64));
    group.bench_function("one_shot_4096", |b| {
        b.iter(|| {
            let mut st = EncoderState::new(8, values.len()).unwrap();
            st.absorb(black_box(&values)).unwrap();
            st.finish().unwrap()
        })
    });
    group.finish();
}

fn bench_network_forward(c: &mut Criterion) {
    let cfg = GenConfig {
        channels: 16,
        input_hw: 6,
        ..GenConfig::default()
    };
    let net = generate_network(&cfg).unwrap();
    let input = net.input_tensor(eval_input_codes(&cfg, 0)).unwrap();
    let mut group = c.benchmark_group("forward");
    group.sample_size(20);
    group.bench_function("hybrid", |b| {
        b.iter(|| net.run(black_box(&input), &RunOptions::default()).unwrap())
    });
    group.bench_function("exact", |b| {
        b.iter(|| {
            net.run_exact(black_box(&input), &RunOptions::default())
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_rmse_trials,
    bench_encoder,
    bench_network_forward
);
criterion_main!(benches);
