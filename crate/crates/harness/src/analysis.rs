//! PoS reports and gradient checks for a configured agent.

use ipnav_core::lidar_prep::PosReport;
use ipnav_core::rng::substream;
use ipnav_core::sac::{ActionBounds, Batch, IpSetup, SacAgent, SacConfig, Transition};
use ipnav_core::tinygrad::{GradcheckConfig, GradcheckReport, NetworkSpec};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::Result;

/// Default PoS threshold offset above `Y_min`, in meters.
pub const DEFAULT_THRESHOLD_OFFSET: f64 = 0.8;

/// Per-beam PoS of the configured IP mapping. With a checkpoint, the
/// trained IP parameters are used instead of the initial ones.
pub fn pos_report(cfg: &ExperimentConfig, ck: Option<&Checkpoint>, threshold_offset: f64) -> Result<PosReport> {
    let setup = match ck {
        Some(ck) => {
            let agent = SacAgent::from_state(ck.agent.clone(), ck.seed);
            let mut setup = ck.agent.ip.clone().unwrap_or(cfg.ip_setup()?);
            if let Some(p) = agent.current_ip() {
                setup.params = p;
            }
            setup
        }
        None => cfg.ip_setup()?,
    };
    Ok(PosReport::build(
        &setup.y_min,
        &setup.y_max,
        &setup.params,
        threshold_offset,
    )?)
}

/// Whether every beam's mapped PoS exceeds the linear one.
pub fn pos_improves(report: &PosReport) -> bool {
    report.beams.iter().all(|b| b.rho_mapped > b.rho_linear)
}

/// Random transitions with scans inside the per-beam bounds, other
/// features in `[-1, 1]` and actions inside `bounds`.
pub fn random_batch<R: Rng + ?Sized>(
    policy: &NetworkSpec,
    ip: &IpSetup,
    bounds: &ActionBounds,
    n: usize,
    rng: &mut R,
) -> Batch {
    let layout = policy.input;
    let m = layout.scan_len;
    let obs = |rng: &mut R| -> Vec<f64> {
        let mut x: Vec<f64> = (0..layout.scan_width())
            .map(|j| rng.random_range(ip.y_min[j % m]..ip.y_max[j % m]))
            .collect();
        x.extend((0..layout.extra).map(|_| rng.random_range(-1.0..1.0)));
        x
    };
    let ts: Vec<Transition> = (0..n)
        .map(|_| Transition {
            x: obs(rng),
            a: bounds
                .low
                .iter()
                .zip(&bounds.high)
                .map(|(&l, &h)| rng.random_range(l..h))
                .collect(),
            r: rng.random_range(-1.0..1.0),
            x_next: obs(rng),
            d: if rng.random_bool(0.2) { 1.0 } else { 0.0 },
        })
        .collect();
    Batch::from_transitions(&ts.iter().collect::<Vec<_>>())
}

/// Gradient checks of the policy loss (policy and IP parameters) and the
/// critic loss (both critics and IP parameters) in 64-bit, dropout off,
/// with fixed noise.
#[allow(clippy::too_many_arguments)]
pub fn agent_gradchecks(
    mut policy: NetworkSpec,
    mut critic: NetworkSpec,
    ip: IpSetup,
    bounds: ActionBounds,
    sac: SacConfig,
    batch_size: usize,
    seed: u64,
    cfg: &GradcheckConfig,
) -> Result<Vec<(String, GradcheckReport)>> {
    policy.dropout_rate = 0.0;
    critic.dropout_rate = 0.0;
    let agent = SacAgent::<f64>::new(sac, policy.clone(), critic, bounds.clone(), Some(ip.clone()), seed)?;
    let mut rng = substream(seed, "gradcheck");
    let batch = random_batch(&policy, &ip, &bounds, batch_size, &mut rng);
    let eps: Vec<f64> = (0..batch_size * bounds.dim())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let targets: Vec<f64> = (0..batch_size).map(|_| rng.random_range(-2.0..2.0)).collect();
    Ok(vec![
        ("policy_loss".into(), agent.gradcheck_policy_loss(&batch, &eps, cfg)?),
        (
            "critic_loss".into(),
            agent.gradcheck_critic_loss(&batch, &targets, cfg)?,
        ),
    ])
}

/// [`agent_gradchecks`] for an experiment config.
pub fn config_gradchecks(
    cfg: &ExperimentConfig,
    seed: u64,
    gc: &GradcheckConfig,
) -> Result<Vec<(String, GradcheckReport)>> {
    let (policy, critic) = cfg.model.specs(&cfg.env, 2)?;
    agent_gradchecks(
        policy,
        critic,
        cfg.ip_setup()?,
        cfg.action_bounds(),
        cfg.sac.clone(),
        4,
        seed,
        gc,
    )
}
