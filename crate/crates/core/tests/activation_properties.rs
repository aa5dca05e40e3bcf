use adaptact_core::activations::{identifiability_witness, linspace};
use adaptact_core::ActivationKind;
use proptest::prelude::*;

const ADAPTIVE: [ActivationKind; 3] = [
    ActivationKind::AdaptiveGumbel,
    ActivationKind::AdaptiveReluExp,
    ActivationKind::AdaptiveReluLogistic,
];

fn log_alpha() -> impl Strategy<Value = f64> {
    (-3.0f64..4.0).prop_map(f64::exp)
}

proptest! {
    #[test]
    fn outputs_are_finite(kind in prop::sample::select(ActivationKind::ALL.to_vec()), alpha in log_alpha(), x in -700.0f64..700.0) {
        let e = kind.eval(alpha, x);
        prop_assert!(e.value.is_finite() && e.dx.is_finite() && e.dalpha.is_finite(), "{:?}", e);
    }

    #[test]
    fn gumbel_is_a_cdf(alpha in log_alpha(), x in -40.0f64..40.0, step in 1e-3f64..1.0) {
        let g = |t: f64| ActivationKind::AdaptiveGumbel.eval(alpha, t);
        let (a, b) = (g(x), g(x + step));
        prop_assert!((0.0..=1.0).contains(&a.value));
        prop_assert!(b.value >= a.value);
        prop_assert!(a.dx >= 0.0);
    }

    #[test]
    fn exp_relu_sits_between_zero_and_relu(alpha in log_alpha(), x in -50.0f64..50.0) {
        let v = ActivationKind::AdaptiveReluExp.eval(alpha, x).value;
        prop_assert!(v >= 0.0 && v <= x.max(0.0));
        // larger alpha is closer to ReLU
        let w = ActivationKind::AdaptiveReluExp.eval(alpha * 2.0, x).value;
        prop_assert!(w >= v);
    }

    #[test]
    fn derivatives_match_central_differences(
        kind in prop::sample::select(ADAPTIVE.to_vec()),
        alpha in log_alpha(),
        x in -15.0f64..15.0,
    ) {
        prop_assume!(x.abs() > 1e-3);
        let h = 1e-6;
        let e = kind.eval(alpha, x);
        let fx = (kind.eval(alpha, x + h).value - kind.eval(alpha, x - h).value) / (2.0 * h);
        let fa = (kind.eval(alpha + h, x).value - kind.eval(alpha - h, x).value) / (2.0 * h);
        let tol = |a: f64, b: f64| 1e-5 * a.abs().max(b.abs()) + 1e-8 + 1e-9 * e.value.abs() / alpha.min(1.0);
        prop_assert!((e.dx - fx).abs() <= tol(e.dx, fx), "dx {} vs {}", e.dx, fx);
        prop_assert!((e.dalpha - fa).abs() <= tol(e.dalpha, fa), "dalpha {} vs {}", e.dalpha, fa);
    }

    #[test]
    fn distinct_shapes_are_distinguishable(a in log_alpha(), ratio in 1.001f64..10.0) {
        let w = identifiability_witness(a, a * ratio, &linspace(-20.0, 20.0, 401)).unwrap();
        prop_assert!(w > 0.0);
        prop_assert_eq!(identifiability_witness(a, a, &linspace(-20.0, 20.0, 401)).unwrap(), 0.0);
    }
}
