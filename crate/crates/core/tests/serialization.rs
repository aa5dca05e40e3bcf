use adaptact_core::network::ParamClass;
use adaptact_core::trainer::rng_from;
use adaptact_core::{ActivationKind, Architecture, Network, OutputSpec, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random_net(kind: ActivationKind, depth: usize, width: usize, classes: usize, seed: u64) -> Network {
    let output = if classes == 2 {
        OutputSpec::BinaryLogistic
    } else {
        OutputSpec::Softmax { classes }
    };
    let mut net = Architecture::mlp(5, depth, width, kind, output).build().unwrap();
    let mut rng = rng_from(seed);
    for layer in net.layers_mut() {
        for class in ParamClass::ALL {
            for i in 0..layer.param_count(class) {
                // wide exponent range exercises the 17-digit float path
                let v: f64 = rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-12..3));
                layer.set_param(class, i, v);
            }
        }
    }
    net
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn json_round_trip_is_bitwise(
        kind in prop::sample::select(ActivationKind::ALL.to_vec()),
        depth in 0usize..4,
        width in 1usize..6,
        classes in 2usize..5,
        seed in any::<u64>(),
    ) {
        let net = random_net(kind, depth, width, classes, seed);
        let text = net.to_json().unwrap();
        let back = Network::from_json(&text).unwrap();
        prop_assert_eq!(back.to_json().unwrap(), text);
        let mut rng = rng_from(seed ^ 1);
        let x = Tensor::from_fn([20, 5], |_| rng.random_range(-4.0..4.0)).unwrap();
        let (p, q) = (net.predict(&x).unwrap(), back.predict(&x).unwrap());
        prop_assert!(p.data().iter().zip(q.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn save_and_load_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let net = random_net(ActivationKind::AdaptiveGumbel, 2, 4, 2, 3);
    let path = dir.path().join("m.json");
    net.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"format\": \"adaptact-network\""));
    assert!(text.contains("\"version\": 1"));
    assert_eq!(Network::load(&path).unwrap().alphas(), net.alphas());
}

#[test]
fn malformed_documents_are_rejected() {
    let net = random_net(ActivationKind::Sigmoid, 1, 3, 2, 1);
    let text = net.to_json().unwrap();
    assert!(Network::from_json(&text.replace("adaptact-network", "other")).is_err());
    assert!(Network::from_json(&text[..text.len() / 2]).is_err());
    assert!(Network::from_json("{}").is_err());
    // a weight matrix that no longer matches its neighbours
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut broken = v.clone();
    broken["input_shape"] = serde_json::json!([6]);
    assert!(Network::from_json(&broken.to_string()).is_err());
}
