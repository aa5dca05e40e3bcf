use adaptact_core::network::ParamClass;
use adaptact_core::trainer::{grad_check, rng_from, ParamCheck};
use adaptact_core::{ActivationKind, Architecture, BaseLoss, LayerSpec, LossSpec, Network, OutputSpec, Tensor};
use proptest::prelude::*;
use rand::Rng;

// plain ReLU is left out: a central difference straddling its kink is a
// legitimate mismatch, not a bug
const SMOOTH: [ActivationKind; 5] = [
    ActivationKind::Identity,
    ActivationKind::Sigmoid,
    ActivationKind::AdaptiveGumbel,
    ActivationKind::AdaptiveReluExp,
    ActivationKind::AdaptiveReluLogistic,
];

fn randomize(net: &mut Network, seed: u64) {
    let mut rng = rng_from(seed);
    for layer in net.layers_mut() {
        for class in ParamClass::ALL {
            for i in 0..layer.param_count(class) {
                let v = match class {
                    ParamClass::Shape => rng.random_range(-1.0..1.0),
                    _ => rng.random_range(-0.8..0.8),
                };
                layer.set_param(class, i, v);
            }
        }
    }
}

fn batch(shape: Vec<usize>, classes: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = rng_from(seed ^ 0x9e37);
    let n = shape[0];
    let x = Tensor::from_fn(shape, |_| rng.random_range(-2.0..2.0)).unwrap();
    (x, (0..n).map(|_| rng.random_range(0..classes)).collect())
}

/// True when a 100x finer central difference agrees with the analytic
/// gradient. Smooth losses have O(h^2) central-difference error, so a
/// mismatch that vanishes on the finer step means `[-h, h]` straddled a kink
/// (a max-pool winner swapping, an L1 term crossing zero). A wrong analytic
/// gradient still disagrees.
fn straddles_kink(net: &Network, x: &Tensor, labels: &[usize], loss: &LossSpec, c: &ParamCheck, h: f64) -> bool {
    let w0 = net.layers()[c.layer].param(c.class, c.index);
    let at = |t: f64| {
        let mut probe = net.clone();
        probe.layers_mut()[c.layer].set_param(c.class, c.index, w0 + t);
        probe.loss(x, labels, loss).unwrap()
    };
    let fine = (at(h / 100.0) - at(-h / 100.0)) / (h / 50.0);
    (fine - c.analytic).abs() <= 1e-5 * c.analytic.abs().max(fine.abs()).max(1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn dense_gradients_match_central_differences(
        kind in prop::sample::select(SMOOTH.to_vec()),
        depth in 1usize..4,
        width in 1usize..7,
        n in 1usize..9,
        softmax in any::<bool>(),
        squared in any::<bool>(),
        penalize_alpha in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let output = if softmax { OutputSpec::Softmax { classes: 3 } } else { OutputSpec::BinaryLogistic };
        let mut net = Architecture::mlp(4, depth, width, kind, output).build().unwrap();
        randomize(&mut net, seed);
        let (x, labels) = batch(vec![n, 4], output.classes(), seed);
        let loss = LossSpec {
            base: if squared { BaseLoss::SquaredError } else { BaseLoss::CrossEntropy },
            l1: 0.01,
            l2: 0.02,
            penalize_alpha,
        };
        let report = grad_check(&net, &x, &labels, &loss, 1e-5, 1e-5).unwrap();
        let real: Vec<_> = report.flagged.iter().filter(|c| !straddles_kink(&net, &x, &labels, &loss, c, 1e-5)).collect();
        prop_assert!(real.is_empty(), "{:?}", real.first());
    }

    #[test]
    fn conv_gradients_match_central_differences(
        kind in prop::sample::select(SMOOTH[1..].to_vec()),
        channels in 1usize..4,
        kernel in 1usize..4,
        seed in any::<u64>(),
    ) {
        let arch = Architecture {
            input: vec![2, 7, 7],
            hidden: vec![
                LayerSpec::Conv2d { channels, kernel, activation: kind },
                LayerSpec::MaxPool2d,
                LayerSpec::Dense { units: 3, activation: kind },
            ],
            output: OutputSpec::Softmax { classes: 3 },
        };
        let mut net = arch.build().unwrap();
        randomize(&mut net, seed);
        let (x, labels) = batch(vec![2, 2, 7, 7], 3, seed);
        let loss = LossSpec::cross_entropy();
        let report = grad_check(&net, &x, &labels, &loss, 1e-5, 1e-5).unwrap();
        let real: Vec<_> = report.flagged.iter().filter(|c| !straddles_kink(&net, &x, &labels, &loss, c, 1e-5)).collect();
        prop_assert!(real.is_empty(), "{:?}", real.first());
    }
}

#[test]
fn relu_net_away_from_kinks() {
    let mut net = Architecture::mlp(4, 2, 6, ActivationKind::Relu, OutputSpec::BinaryLogistic)
        .build()
        .unwrap();
    randomize(&mut net, 11);
    let (x, labels) = batch(vec![8, 4], 2, 11);
    let report = grad_check(&net, &x, &labels, &LossSpec::new(BaseLoss::CrossEntropy, 0.001, 0.001).unwrap(), 1e-5, 1e-5).unwrap();
    assert!(report.passed(), "{:?}", report.flagged);
    assert_eq!(report.class(ParamClass::Shape).count, 0);
}

#[test]
fn pooling_tie_is_recognized_as_a_kink() {
    let kind = ActivationKind::Sigmoid;
    let arch = Architecture {
        input: vec![2, 7, 7],
        hidden: vec![
            LayerSpec::Conv2d { channels: 1, kernel: 1, activation: kind },
            LayerSpec::MaxPool2d,
            LayerSpec::Dense { units: 3, activation: kind },
        ],
        output: OutputSpec::Softmax { classes: 3 },
    };
    let mut net = arch.build().unwrap();
    // a seed where one pool window's top two entries sit within 1e-5 of a swap
    let seed = 16565681517513885281;
    randomize(&mut net, seed);
    let (x, labels) = batch(vec![2, 2, 7, 7], 3, seed);
    let loss = LossSpec::cross_entropy();
    let coarse = grad_check(&net, &x, &labels, &loss, 1e-5, 1e-5).unwrap();
    assert_eq!(coarse.flagged.len(), 1);
    assert!(straddles_kink(&net, &x, &labels, &loss, &coarse.flagged[0], 1e-5));
    assert!(grad_check(&net, &x, &labels, &loss, 1e-7, 1e-5).unwrap().passed());
}

#[test]
fn corrupted_gradient_is_flagged() {
    let mut net = Architecture::mlp(3, 1, 4, ActivationKind::AdaptiveGumbel, OutputSpec::BinaryLogistic)
        .build()
        .unwrap();
    randomize(&mut net, 5);
    let (x, labels) = batch(vec![6, 3], 2, 5);
    let loss = LossSpec::cross_entropy();
    let mut work = net.clone();
    let (_, mut grads) = work.loss_and_gradients(&x, &labels, &loss).unwrap();
    grads.get_mut(0, ParamClass::Shape)[2] *= 1.01;
    let report = adaptact_core::trainer::grad_check_against(&net, &grads, &x, &labels, &loss, 1e-5, 1e-5).unwrap();
    assert!(!report.passed());
    assert_eq!(report.flagged.len(), 1);
    let p = report.flagged[0];
    assert_eq!((p.layer, p.class, p.index), (0, ParamClass::Shape, 2));
    assert!(!straddles_kink(&net, &x, &labels, &loss, &p, 1e-5));
}
