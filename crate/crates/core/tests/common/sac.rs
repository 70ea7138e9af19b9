//! Critic targets and parameter partition on small frozen networks.

use ipnav_core::lidar_prep::{IpFamily, IpParams, Sharing};
use ipnav_core::sac::{ActionBounds, Batch, IpSetup, SacAgent, SacConfig, Transition};
use ipnav_core::tinygrad::{Activation, InputLayout, NetworkSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ensure, Check};

pub const LAYOUT: InputLayout = InputLayout {
    scan_len: 2,
    stack: 1,
    extra: 1,
};

pub fn specs(hidden: &[usize]) -> (NetworkSpec, NetworkSpec) {
    let mut c = LAYOUT;
    c.extra += 1;
    (
        NetworkSpec::mlp(LAYOUT, hidden, Activation::Tanh, 0.0, 2).unwrap(),
        NetworkSpec::mlp(c, hidden, Activation::Tanh, 0.0, 1).unwrap(),
    )
}

pub fn bounds() -> ActionBounds {
    ActionBounds::new(vec![0.0], vec![0.5])
}

pub fn ip(family: IpFamily) -> IpSetup {
    let y_min = vec![0.2, 0.25];
    IpSetup {
        params: IpParams::initial(family, Sharing::Shared, &y_min),
        y_min,
        y_max: vec![30.0, 30.0],
    }
}

pub fn agent(cfg: SacConfig, hidden: &[usize], ip: Option<IpSetup>, seed: u64) -> SacAgent<f64> {
    let (p, c) = specs(hidden);
    SacAgent::new(cfg, p, c, bounds(), ip, seed).unwrap()
}

pub fn batch(rng: &mut ChaCha8Rng, n: usize, done: Option<f64>) -> Batch {
    let obs = |rng: &mut ChaCha8Rng| {
        vec![
            rng.random_range(0.3..5.0),
            rng.random_range(0.3..5.0),
            rng.random_range(-1.0..1.0),
        ]
    };
    let ts: Vec<Transition> = (0..n)
        .map(|_| Transition {
            x: obs(rng),
            a: vec![rng.random_range(0.0..0.5)],
            r: rng.random_range(-2.0..2.0),
            x_next: obs(rng),
            d: done.unwrap_or_else(|| if rng.random_bool(0.5) { 1.0 } else { 0.0 }),
        })
        .collect();
    Batch::from_transitions(&ts.iter().collect::<Vec<_>>())
}

/// With `d = 1` everywhere the target is the reward, exactly.
pub fn terminal_masking() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut a = agent(SacConfig::default(), &[8], Some(ip(IpFamily::IPAPRec)), 3);
    let b = batch(&mut rng, 16, Some(1.0));
    let t = a.critic_targets(&b).map_err(|e| e.to_string())?;
    ensure!(t == b.r, "targets {t:?} differ from rewards {:?}", b.r);
    Ok("16 terminal transitions target r exactly".into())
}

/// Single-layer policy and critics with fixed weights; the soft target is
/// recomputed with scalar arithmetic.
pub fn hand_computed_target() -> Check {
    let cfg = SacConfig {
        gamma: 0.9,
        alpha: 0.2,
        ..SacConfig::default()
    };
    let mut a = agent(cfg, &[], None, 5);
    let w_pi = [0.1, -0.2, 0.3, 0.05, -0.4, 0.1];
    let b_pi = [0.05, -0.3];
    let w1 = [0.2, -0.1, 0.3, 1.0];
    let w2 = [-0.1, 0.2, 0.1, 0.5];
    let (b1, b2) = (0.1, -0.05);
    a.state.policy.get_mut(0).value.data = w_pi.to_vec();
    a.state.policy.get_mut(1).value.data = b_pi.to_vec();
    a.state.q1_target.get_mut(0).value.data = w1.to_vec();
    a.state.q1_target.get_mut(1).value.data = vec![b1];
    a.state.q2_target.get_mut(0).value.data = w2.to_vec();
    a.state.q2_target.get_mut(1).value.data = vec![b2];
    // online critics differ from the targets and must not be used
    a.state.q1.get_mut(1).value.data = vec![100.0];

    let ts = [
        Transition {
            x: vec![1.0, 2.0, 0.5],
            a: vec![0.1],
            r: 0.7,
            x_next: vec![1.5, 0.8, -0.2],
            d: 0.0,
        },
        Transition {
            x: vec![0.4, 3.0, 0.1],
            a: vec![0.4],
            r: -1.2,
            x_next: vec![2.5, 1.1, 0.9],
            d: 1.0,
        },
    ];
    let b = Batch::from_transitions(&ts.iter().collect::<Vec<_>>());
    let eps = [0.3, -1.1];
    let got = a.critic_targets_with_noise(&b, &eps).map_err(|e| e.to_string())?;

    let mut worst = 0.0f64;
    for (i, t) in ts.iter().enumerate() {
        let x = &t.x_next;
        let head: Vec<f64> = (0..2)
            .map(|j| b_pi[j] + (0..3).map(|k| x[k] * w_pi[k * 2 + j]).sum::<f64>())
            .collect();
        let mean = head[0];
        let log_std = -5.0 + 0.5 * 7.0 * (head[1].tanh() + 1.0);
        let u = mean + log_std.exp() * eps[i];
        let act = 0.25 + 0.25 * u.tanh();
        let logp = -0.5 * eps[i] * eps[i]
            - log_std
            - 0.5 * (2.0 * std::f64::consts::PI).ln()
            - (1.0 - u.tanh().powi(2)).ln()
            - 0.25f64.ln();
        let q = |w: &[f64; 4], b: f64| b + x[0] * w[0] + x[1] * w[1] + x[2] * w[2] + act * w[3];
        let qmin = q(&w1, b1).min(q(&w2, b2));
        let expected = t.r + 0.9 * (1.0 - t.d) * (qmin - 0.2 * logp);
        let err = (got[i] - expected).abs();
        ensure!(err < 1e-6, "transition {i}: {} vs {expected}", got[i]);
        worst = worst.max(err);
    }
    Ok(format!("2-transition target within {worst:.1e}"))
}

/// Critic steps leave the policy and targets bitwise unchanged, policy
/// steps leave the critics and targets unchanged, for shared and separate
/// IP parameters.
pub fn parameter_partition() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = batch(&mut rng, 8, None);
    for shared in [true, false] {
        let cfg = SacConfig {
            shared_zeta: shared,
            lr: 1e-2,
            ..SacConfig::default()
        };
        let mut a = agent(cfg, &[6], Some(ip(IpFamily::IPAPRec)), 4);
        let before = a.state.clone();
        a.critic_update(&b).map_err(|e| e.to_string())?;
        let s = &a.state;
        ensure!(
            s.policy == before.policy,
            "critic step moved the policy (shared {shared})"
        );
        ensure!(
            s.q1_target == before.q1_target && s.q2_target == before.q2_target,
            "critic step moved a target"
        );
        ensure!(
            s.q1.flat_values() != before.q1.flat_values(),
            "critic step left q1 unchanged"
        );
        ensure!(
            s.q2.flat_values() != before.q2.flat_values(),
            "critic step left q2 unchanged"
        );
        if shared {
            ensure!(
                s.zeta[0].flat_values() != before.zeta[0].flat_values(),
                "critic step left shared zeta unchanged"
            );
        } else {
            ensure!(s.zeta[0] == before.zeta[0], "critic step moved the policy's zeta");
            ensure!(
                s.zeta[1].flat_values() != before.zeta[1].flat_values(),
                "critic step left critic zeta unchanged"
            );
        }

        let mid = a.state.clone();
        a.policy_update(&b).map_err(|e| e.to_string())?;
        let s = &a.state;
        ensure!(
            s.q1 == mid.q1 && s.q2 == mid.q2,
            "policy step moved a critic (shared {shared})"
        );
        ensure!(
            s.q1_target == mid.q1_target && s.q2_target == mid.q2_target,
            "policy step moved a target"
        );
        ensure!(
            s.policy.flat_values() != mid.policy.flat_values(),
            "policy step left the policy unchanged"
        );
        ensure!(
            s.zeta[0].flat_values() != mid.zeta[0].flat_values(),
            "policy step left zeta unchanged"
        );
        if !shared {
            ensure!(
                s.zeta[1] == mid.zeta[1] && s.zeta[2] == mid.zeta[2],
                "policy step moved critic zeta"
            );
        }
    }
    Ok("critic and policy steps touch disjoint parameters (shared and separate zeta)".into())
}
