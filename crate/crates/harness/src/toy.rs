//! One-dimensional point mass that must move to the origin, used as a small
//! end-to-end learning check for the SAC agent.
//!
//! The state is the position `x`, the action a velocity in `[-1, 1]`, and
//! each step moves `x` by `0.1 * a` and pays `-|x'|`. Episodes last
//! [`HORIZON`] steps and never terminate early.

use ipnav_core::rng::substream;
use ipnav_core::sac::{ActionBounds, Agent, SacAgent, SacConfig, Transition};
use ipnav_core::tinygrad::{Activation, InputLayout, NetworkSpec};
use rand::Rng;

use crate::Result;

pub const HORIZON: usize = 50;
pub const STEP: f64 = 0.1;
pub const START_RANGE: f64 = 1.0;
const LIMIT: f64 = 2.0;

fn advance(x: f64, a: f64) -> (f64, f64) {
    let next = (x + STEP * a.clamp(-1.0, 1.0)).clamp(-LIMIT, LIMIT);
    (next, -next.abs())
}

/// Return of one episode from `x0` under `policy`.
pub fn rollout(x0: f64, mut policy: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let mut x = x0;
    let mut ret = 0.0;
    for _ in 0..HORIZON {
        let (next, r) = advance(x, policy(x)?);
        ret += r;
        x = next;
    }
    Ok(ret)
}

/// Evaluation start positions, the same for every seed.
pub fn eval_starts(n: usize) -> Vec<f64> {
    let mut rng = substream(0, "suite");
    (0..n).map(|_| rng.random_range(-START_RANGE..START_RANGE)).collect()
}

/// Mean return of full-speed motion towards the origin, which is optimal
/// because every step's reward depends only on the distance reached.
pub fn optimal_return(starts: &[f64]) -> f64 {
    let total: f64 = starts
        .iter()
        .map(|&x0| rollout(x0, |x| Ok((-x / STEP).clamp(-1.0, 1.0))).unwrap())
        .sum();
    total / starts.len() as f64
}

/// Mean return of uniform random actions, `repeats` rollouts per start.
pub fn random_return(starts: &[f64], repeats: usize, seed: u64) -> f64 {
    let mut rng = substream(seed, "random_actions");
    let mut total = 0.0;
    for &x0 in starts {
        for _ in 0..repeats {
            total += rollout(x0, |_| Ok(rng.random_range(-1.0..1.0))).unwrap();
        }
    }
    total / (starts.len() * repeats) as f64
}

pub fn agent(seed: u64) -> Result<SacAgent<f32>> {
    let layout = InputLayout {
        scan_len: 0,
        stack: 1,
        extra: 1,
    };
    let mut critic_in = layout;
    critic_in.extra += 1;
    let hidden = [32, 32];
    let policy = NetworkSpec::mlp(layout, &hidden, Activation::Relu, 0.0, 2)?;
    let critic = NetworkSpec::mlp(critic_in, &hidden, Activation::Relu, 0.0, 1)?;
    let bounds = ActionBounds::new(vec![-1.0], vec![1.0]);
    Ok(SacAgent::new(SacConfig::default(), policy, critic, bounds, None, seed)?)
}

/// Mean deterministic return of `agent` over `starts`.
pub fn evaluate<A: Agent + ?Sized>(agent: &mut A, starts: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for &x0 in starts {
        total += rollout(x0, |x| Ok(agent.act(&[x / START_RANGE], true)?[0]))?;
    }
    Ok(total / starts.len() as f64)
}

/// Trains for `steps` environment steps, the first `random_steps` with
/// uniform actions and no updates, one update per step afterwards.
pub fn train(seed: u64, steps: usize, random_steps: usize) -> Result<SacAgent<f32>> {
    let mut agent = agent(seed)?;
    let mut task_rng = substream(seed, "tasks");
    let mut action_rng = substream(seed, "random_actions");
    let mut x = task_rng.random_range(-START_RANGE..START_RANGE);
    let mut t = 0;
    for step in 0..steps {
        let obs = [x / START_RANGE];
        let a = if step < random_steps {
            action_rng.random_range(-1.0..1.0)
        } else {
            agent.act(&obs, false)?[0]
        };
        let (next, r) = advance(x, a);
        agent.observe(Transition {
            x: obs.to_vec(),
            a: vec![a],
            r,
            x_next: vec![next / START_RANGE],
            d: 0.0,
        });
        if step >= random_steps {
            agent.update()?;
        }
        x = next;
        t += 1;
        if t == HORIZON {
            x = task_rng.random_range(-START_RANGE..START_RANGE);
            t = 0;
        }
    }
    Ok(agent)
}

/// Fraction of the random-to-optimal return gap closed by a trained agent.
pub fn gap_closed(trained: f64, random: f64, optimal: f64) -> f64 {
    (trained - random) / (optimal - random)
}
