//! Autodiff against finite differences, Adam on a quadratic and dropout
//! statistics.

use ipnav_core::lidar_prep::{IpFamily, Sharing};
use ipnav_core::tinygrad::suite::{model_suite, op_suite};
use ipnav_core::tinygrad::{AdamConfig, GradcheckConfig, Graph, ParamSet, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_passes_gradcheck() {
    let cfg = GradcheckConfig {
        max_coords_per_tensor: None,
        ..GradcheckConfig::default()
    };
    for (name, r) in op_suite(&cfg, 7).unwrap() {
        assert!(r.passes(1e-6), "{name}: {r:?}");
    }
}

#[test]
fn models_with_ip_pass_gradcheck() {
    let cfg = GradcheckConfig::default();
    for (family, sharing) in [
        (IpFamily::IPAPRec, Sharing::Shared),
        (IpFamily::IPAPExp, Sharing::PerBeam),
    ] {
        for (name, r) in model_suite(family, sharing, &cfg, 8).unwrap() {
            assert!(r.passes(1e-4), "{name}: {r:?}");
            assert!(r.n_checked > 100, "{name}: only {} probes", r.n_checked);
        }
    }
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut ps = ParamSet::<f64>::new();
    ps.add("x", Tensor::scalar(0.0));
    let cfg = AdamConfig::with_lr(0.01);
    for _ in 0..5000 {
        let mut g = Graph::new();
        let v = ps.bind(&mut g, true);
        let d = g.add_scalar(v[0], -2.0);
        let loss = g.square(d);
        let loss = g.sum(loss);
        g.backward(loss).unwrap();
        ps.accumulate_grads(&g, &v);
        ps.adam_step(&cfg);
    }
    let x = ps.get(0).value.item();
    assert!((x - 2.0).abs() < 1e-3, "x = {x}");
}

#[test]
fn dropout_keeps_rate_and_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rate = 0.3;
    let n = 100;
    let (mut zeros, mut total, mut sum) = (0usize, 0usize, 0.0);
    for _ in 0..10_000 {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![1, n], vec![1.0; n]));
        let y = g.dropout(x, rate, &mut rng).unwrap();
        for &v in &g.value(y).data {
            total += 1;
            sum += v;
            if v == 0.0 {
                zeros += 1;
            } else {
                assert!((v - 1.0 / (1.0 - rate)).abs() < 1e-12);
            }
        }
    }
    let frac = zeros as f64 / total as f64;
    assert!((frac - rate).abs() < 0.02 * rate, "dropped fraction {frac}");
    let mean = sum / total as f64;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
}

#[test]
fn dropout_is_identity_at_rate_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 4.0]));
    let y = g.dropout(x, 0.0, &mut rng).unwrap();
    assert_eq!(g.value(y), g.value(x));
}
