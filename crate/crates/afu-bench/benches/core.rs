//! Microbenchmarks for the hot paths: batched network passes, the
//! value/advantage loss, the gradient projection, and a full gradient step.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use afu_core::actor::project_gradient;
use afu_core::maxq::{lambda_va_loss, MaxQPair};
use afu_core::nn::{Activation, MlpNet};
use afu_core::trainer::{AfuConfig, AfuVariant, Trainer};

fn bench_forward_backward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = MlpNet::new(&[2, 256, 256, 1], Activation::Relu, &mut rng);
    let x = Array2::from_shape_fn((256, 2), |_| rng.random_range(-1.0..1.0));
    let og = Array2::ones((256, 1));

    c.bench_function("forward_batch_256x[256,256]", |b| {
        b.iter(|| black_box(net.forward_batch(black_box(x.view()))))
    });
    c.bench_function("backward_batch_256x[256,256]", |b| {
        b.iter_batched(
            || net.forward_trace(x.view()),
            |trace| black_box(net.backward_trace(&trace, og.view())),
            BatchSize::SmallInput,
        )
    });
}

fn bench_value_advantage_loss(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let value = MlpNet::new(&[1, 128, 128, 1], Activation::Relu, &mut rng);
    let advantage = MlpNet::new(&[2, 128, 128, 1], Activation::Relu, &mut rng);
    let pair = MaxQPair::new(value, advantage, 0.3).unwrap();
    let states = Array2::from_shape_fn((256, 1), |_| rng.random_range(-1.0..1.0));
    let actions = Array2::from_shape_fn((256, 1), |_| rng.random_range(-1.0..1.0));
    let targets: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();

    c.bench_function("lambda_va_loss_256x[128,128]", |b| {
        b.iter(|| {
            black_box(lambda_va_loss(&pair, states.view(), actions.view(), &targets).unwrap())
        })
    });
}

fn bench_projection(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 6;
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();

    c.bench_function("project_gradient_d6", |b| {
        b.iter(|| black_box(project_gradient(&v, &a, &mu, -1.0, 0.0)))
    });
}

fn bench_gradient_step(c: &mut Criterion) {
    let mut cfg = AfuConfig::sfm_desk(AfuVariant::Beta, 0);
    cfg.hidden = vec![64, 64];
    cfg.warmup_steps = 300;
    cfg.total_steps = 20_000;
    let mut trainer = Trainer::new(cfg).unwrap();
    // Past warmup so every step includes a gradient step.
    for _ in 0..301 {
        trainer.step().unwrap();
    }
    c.bench_function("trainer_step_beta_sfm_[64,64]", |b| {
        b.iter(|| trainer.step().unwrap())
    });
}

criterion_group!(
    benches,
    bench_forward_backward,
    bench_value_advantage_loss,
    bench_projection,
    bench_gradient_step
);
criterion_main!(benches);
