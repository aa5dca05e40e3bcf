use std::hint::black_box;

use adaptact_core::trainer::{initialize, rng_from, sgd_step};
use adaptact_core::{ActivationKind, Architecture, InitScheme, LossSpec, Network, OutputSpec, Tensor, TrainConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_from(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).unwrap()
}

fn labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from(seed);
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

fn ready(arch: Architecture) -> Network {
    let mut net = arch.build().unwrap();
    initialize(&mut net, InitScheme::LeCun, &mut rng_from(1));
    net
}

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [16usize, 64, 256] {
        let (a, b) = (random(&[n, n], 1), random(&[n, n], 2));
        g.throughput(Throughput::Elements((n * n * n) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap())
        });
    }
    g.finish();
}

fn activations(c: &mut Criterion) {
    let xs: Vec<f64> = (0..4096).map(|i| (i as f64 - 2048.0) / 256.0).collect();
    let mut g = c.benchmark_group("activation_eval");
    g.throughput(Throughput::Elements(xs.len() as u64));
    for kind in ActivationKind::ALL {
        g.bench_function(kind.name(), |bench| {
            bench.iter(|| xs.iter().map(|&x| kind.eval(black_box(0.7), x).value).sum::<f64>())
        });
    }
    g.finish();
}

fn dense(c: &mut Criterion) {
    let x = random(&[20, 10], 3);
    let y = labels(20, 2, 4);
    let loss = LossSpec::new(adaptact_core::BaseLoss::CrossEntropy, 0.001, 0.001).unwrap();
    let mut g = c.benchmark_group("dense_8x10");
    for kind in [ActivationKind::Sigmoid, ActivationKind::AdaptiveGumbel, ActivationKind::AdaptiveReluExp] {
        let net = ready(Architecture::mlp(10, 8, 10, kind, OutputSpec::BinaryLogistic));
        g.bench_function(BenchmarkId::new("forward", kind.name()), |bench| {
            bench.iter(|| net.predict(black_box(&x)).unwrap())
        });
        let mut train = net.clone();
        g.bench_function(BenchmarkId::new("forward_backward", kind.name()), |bench| {
            bench.iter(|| train.loss_and_gradients(black_box(&x), &y, &loss).unwrap())
        });
        let mut step = net.clone();
        let cfg = TrainConfig { gamma: 1e-6, ..TrainConfig::default() };
        g.bench_function(BenchmarkId::new("sgd_step", kind.name()), |bench| {
            bench.iter(|| {
                let (_, grads) = step.loss_and_gradients(&x, &y, &loss).unwrap();
                sgd_step(&mut step, &grads, &cfg).unwrap();
            })
        });
    }
    g.finish();
}

fn conv(c: &mut Criterion) {
    let x = random(&[16, 1, 28, 28], 5);
    let y = labels(16, 10, 6);
    let loss = LossSpec::cross_entropy();
    let net = ready(Architecture::lenet5(ActivationKind::Relu, ActivationKind::AdaptiveGumbel, 1000));
    let mut g = c.benchmark_group("lenet5_batch16");
    g.sample_size(10);
    g.bench_function("forward", |bench| bench.iter(|| net.predict(black_box(&x)).unwrap()));
    let mut train = net.clone();
    g.bench_function("forward_backward", |bench| {
        bench.iter(|| train.loss_and_gradients(black_box(&x), &y, &loss).unwrap())
    });
    g.finish();
}

criterion_group!(benches, matmul, activations, dense, conv);
criterion_main!(benches);
