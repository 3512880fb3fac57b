use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nmca::neural::{ActivationKind, BankTape, ChannelMapBank};
use nmca::nmca::{model_init, procrustes_update, ThetaOptimizer, TrainConfig};
use nmca::synth::{generate_views, SynthConfig};
use nmca::Matrix;

const BATCH: usize = 1000;

fn bank(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bank = ChannelMapBank::init_per_channel(3, &[32], ActivationKind::Relu, &mut rng).unwrap();
    let input: Vec<f64> = (0..BATCH * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
    let upstream: Vec<f64> = (0..BATCH * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut tape = BankTape::default();

    c.bench_function("bank_forward_3x32_b1000", |b| {
        b.iter(|| bank.forward_batch(black_box(&input), BATCH, &mut tape).unwrap())
    });

    let mut grads = bank.zeros_like();
    let mut input_grad = vec![0.0; BATCH * 3];
    c.bench_function("bank_forward_backward_3x32_b1000", |b| {
        b.iter(|| {
            bank.forward_batch(black_box(&input), BATCH, &mut tape).unwrap();
            bank.backward_batch(&mut tape, &upstream, &mut grads, Some(&mut input_grad)).unwrap();
        })
    });
}

fn procrustes(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = Matrix::from_fn(2, 1000, |_, _| rng.random_range(-1.0..1.0));
    c.bench_function("procrustes_k2_n1000", |b| b.iter(|| procrustes_update(black_box(&z)).unwrap()));
}

fn theta_step(c: &mut Criterion) {
    let data = generate_views(&SynthConfig::benchmark(0)).unwrap();
    let cfg = TrainConfig::desk(2, 0);
    c.bench_function("theta_step_benchmark_n1000", |b| {
        b.iter_batched(
            || {
                let model = model_init(&data, &cfg).unwrap();
                let opt = ThetaOptimizer::new(&model, &data, 0).unwrap();
                (model, opt)
            },
            |(mut model, mut opt)| opt.step(&mut model, &cfg).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, bank, procrustes, theta_step);
criterion_main!(benches);
