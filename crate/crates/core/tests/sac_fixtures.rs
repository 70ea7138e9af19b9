//! SAC targets, parameter partition, learning trends, the squashed-Gaussian
//! density and replay sampling.

use ipnav_core::lidar_prep::IpFamily;
use ipnav_core::rng::substream;
use ipnav_core::sac::squash::{bounded_log_std, squashed_log_prob};
use ipnav_core::sac::{ActionBounds, ReplayBuffer, SacConfig, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

mod common;

use common::sac::{agent, batch, hand_computed_target, ip, parameter_partition, terminal_masking};

#[test]
fn terminal_transitions_target_the_reward() {
    terminal_masking().unwrap();
}

#[test]
fn two_transition_target_matches_hand_computation() {
    hand_computed_target().unwrap();
}

#[test]
fn updates_touch_only_their_own_parameters() {
    parameter_partition().unwrap();
}

#[test]
fn targets_follow_online_critics_by_polyak_averaging() {
    let mut a = agent(SacConfig::default(), &[4], None, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = batch(&mut rng, 8, None);
    let t0 = a.state.q1_target.flat_values();
    a.update_on(&b).unwrap();
    let online = a.state.q1.flat_values();
    let t1 = a.state.q1_target.flat_values();
    for i in 0..t0.len() {
        let expected = 0.005 * online[i] + 0.995 * t0[i];
        assert!((t1[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn critic_fits_fixed_targets() {
    let cfg = SacConfig {
        lr: 3e-3,
        grad_clip: None,
        ..SacConfig::default()
    };
    let mut a = agent(cfg, &[32], Some(ip(IpFamily::IPAPRec)), 7);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = batch(&mut rng, 32, None);
    let targets: Vec<f64> = (0..32).map(|i| b.x[3 * i] - b.x[3 * i + 1] + b.a[i]).collect();
    let first = a.critic_update_towards(&b, &targets).unwrap();
    let mut last = first;
    for _ in 0..600 {
        last = a.critic_update_towards(&b, &targets).unwrap();
    }
    assert!(last < 0.05 * first, "loss {first} -> {last}");
}

#[test]
fn entropy_term_spreads_the_policy() {
    let cfg = SacConfig {
        alpha: 1.0,
        lr: 1e-3,
        ..SacConfig::default()
    };
    let mut a = agent(cfg, &[8], None, 8);
    for q in [&mut a.state.q1, &mut a.state.q2] {
        for p in q.iter_mut() {
            p.value.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = batch(&mut rng, 64, None);
    let (_, lp0) = a.policy_update(&b).unwrap();
    let mut lp = lp0;
    for _ in 0..300 {
        lp = a.policy_update(&b).unwrap().1;
    }
    assert!(lp < lp0 - 0.5, "mean log-prob {lp0} -> {lp}");
}

#[test]
fn squashed_density_matches_monte_carlo() {
    let b = ActionBounds::new(vec![-0.5], vec![1.5]);
    let (mean, log_std) = (0.3, bounded_log_std(-0.2, -5.0, 2.0));
    let std = log_std.exp();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 1_000_000;
    let bins = 40;
    let mut hist = vec![0usize; bins];
    for _ in 0..n {
        let e: f64 = rng.sample(StandardNormal);
        let a = b.scale(&[(mean + std * e).tanh()])[0];
        let k = (((a + 0.5) / 2.0) * bins as f64) as usize;
        hist[k.min(bins - 1)] += 1;
    }
    let density = |a: f64| {
        let t: f64 = (a - 0.5) / 1.0;
        let u = t.atanh();
        squashed_log_prob(&[mean], &[log_std], &[u], &b).exp()
    };
    let width = 2.0 / bins as f64;
    let mut compared = 0;
    for (k, &count) in hist.iter().enumerate() {
        let p_emp = count as f64 / n as f64;
        if p_emp < 0.04 {
            continue;
        }
        let lo = -0.5 + k as f64 * width;
        // Simpson's rule over the bin
        let p = width / 6.0 * (density(lo) + 4.0 * density(lo + width / 2.0) + density(lo + width));
        assert!((p_emp - p).abs() < 0.02 * p, "bin {k}: empirical {p_emp}, density {p}");
        compared += 1;
    }
    assert!(compared >= 5);
}

#[test]
fn replay_sampling_is_uniform() {
    let slots = 20;
    let mut buf = ReplayBuffer::new(slots, substream(1, "buffer"));
    for i in 0..slots + 7 {
        buf.push(Transition {
            x: vec![],
            a: vec![],
            r: i as f64,
            x_next: vec![],
            d: 0.0,
        });
    }
    assert_eq!(buf.len(), slots);
    let draws = 100_000;
    let mut counts = vec![0usize; slots + 7];
    for _ in 0..draws / 100 {
        let b = buf.sample(100).unwrap();
        for r in b.r {
            counts[r as usize] += 1;
        }
    }
    // the seven oldest transitions were overwritten
    assert!(counts[..7].iter().all(|&c| c == 0));
    let p = 1.0 / slots as f64;
    let (mean, sd) = (draws as f64 * p, (draws as f64 * p * (1.0 - p)).sqrt());
    for &c in &counts[7..] {
        assert!((c as f64 - mean).abs() < 3.0 * sd, "count {c}, expected {mean} ± {sd}");
    }
}

#[test]
fn single_transition_buffer_returns_it() {
    let mut buf = ReplayBuffer::new(4, substream(2, "buffer"));
    assert!(buf.sample(1).is_err());
    let t = Transition {
        x: vec![1.0],
        a: vec![0.2],
        r: 3.0,
        x_next: vec![2.0],
        d: 1.0,
    };
    buf.push(t.clone());
    let b = buf.sample(1).unwrap();
    assert_eq!(
        (b.x, b.a, b.r, b.x_next, b.d),
        (t.x, t.a, vec![t.r], t.x_next, vec![t.d])
    );
}
