use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::buffer::{Batch, ReplayBuffer, Transition};
use super::squash::{bounded_log_std, sample_in_graph, ActionBounds};
use super::{Agent, SacConfig, SacError};
use crate::lidar_prep::IpParams;
use crate::rng::substream;
use crate::tinygrad::network::preprocess_input;
use crate::tinygrad::{
    gradcheck, AdamConfig, GradError, GradcheckConfig, GradcheckReport, Graph, IpLayer, NetworkSpec, ParamSet, Scalar,
    Tensor, Var,
};

type Result<T> = std::result::Result<T, SacError>;

/// IP family and per-beam bounds shared by every network of an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpSetup {
    /// Family, sharing mode and the initial raw values.
    pub params: IpParams,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
}

impl IpSetup {
    fn layer(&self) -> Arc<IpLayer> {
        Arc::new(IpLayer::new(&self.params, self.y_min.clone(), self.y_max.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub policy_loss: f64,
    /// Mean log density of the sampled actions in the policy loss.
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Policy,
    Q1,
    Q2,
}

/// Everything needed to rebuild an agent, minus the replay buffer and RNG
/// positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct AgentState<T> {
    pub cfg: SacConfig,
    pub bounds: ActionBounds,
    pub policy_spec: NetworkSpec,
    pub critic_spec: NetworkSpec,
    pub ip: Option<IpSetup>,
    pub policy: ParamSet<T>,
    pub q1: ParamSet<T>,
    pub q2: ParamSet<T>,
    pub q1_target: ParamSet<T>,
    pub q2_target: ParamSet<T>,
    /// One set when shared, else policy, q1, q2 copies. Empty without IP
    /// parameters.
    pub zeta: Vec<ParamSet<T>>,
    pub updates: u64,
}

pub struct SacAgent<T: Scalar> {
    pub state: AgentState<T>,
    pub buffer: ReplayBuffer,
    layer: Option<Arc<IpLayer>>,
    noise_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
}

fn zeta_tensor<T: Scalar>(params: &IpParams) -> ParamSet<T> {
    let mut ps = ParamSet::new();
    ps.add("ip.zeta", Tensor::from_f64(vec![params.raw.len()], &params.raw));
    ps
}

fn clip_joint<T: Scalar>(sets: &mut [&mut ParamSet<T>], max_norm: Option<f64>) {
    let Some(max_norm) = max_norm else { return };
    let norm = sets.iter().map(|s| s.grad_norm().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        for s in sets.iter_mut() {
            s.scale_grads(max_norm / norm);
        }
    }
}

fn check_specs(policy: &NetworkSpec, critic: &NetworkSpec, bounds: &ActionBounds) -> Result<()> {
    let a = bounds.dim();
    let bad = |m: String| Err(SacError::Config(m));
    if policy.output_dim() != 2 * a {
        return bad(format!(
            "policy emits {} values, expected {}",
            policy.output_dim(),
            2 * a
        ));
    }
    if critic.output_dim() != 1 {
        return bad("critic must emit one value".into());
    }
    let (pi, ci) = (policy.input, critic.input);
    if ci.scan_len != pi.scan_len || ci.stack != pi.stack || ci.extra != pi.extra + a {
        return bad(format!(
            "critic input {ci:?} does not extend policy input {pi:?} by {a} action values"
        ));
    }
    policy.validate()?;
    critic.validate()?;
    Ok(())
}

impl<T: Scalar> SacAgent<T> {
    /// Fresh agent. Streams for initialization, exploration noise, dropout
    /// and replay sampling all derive from `seed`.
    pub fn new(
        cfg: SacConfig,
        policy_spec: NetworkSpec,
        critic_spec: NetworkSpec,
        bounds: ActionBounds,
        ip: Option<IpSetup>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        check_specs(&policy_spec, &critic_spec, &bounds)?;
        if let Some(ip) = &ip {
            let m = policy_spec.input.scan_len;
            if ip.y_min.len() != m || ip.y_max.len() != m {
                return Err(SacError::Config(format!(
                    "IP bounds for {} beams, scan has {m}",
                    ip.y_min.len()
                )));
            }
            if ip.params.raw.len() != ip.params.expected_len(m) {
                return Err(SacError::Config(
                    "IP raw parameter count does not match the scan".into(),
                ));
            }
        }
        let mut init = substream(seed, "init");
        let policy = policy_spec.init_params(&mut init);
        let q1: ParamSet<T> = critic_spec.init_params(&mut init);
        let q2: ParamSet<T> = critic_spec.init_params(&mut init);
        let zeta = match &ip {
            Some(ip) if ip.params.family.is_trainable() => {
                let copies = if cfg.shared_zeta { 1 } else { 3 };
                (0..copies).map(|_| zeta_tensor(&ip.params)).collect()
            }
            _ => Vec::new(),
        };
        let state = AgentState {
            q1_target: q1.values_only(),
            q2_target: q2.values_only(),
            cfg,
            bounds,
            policy_spec,
            critic_spec,
            ip,
            policy,
            q1,
            q2,
            zeta,
            updates: 0,
        };
        Ok(Self::from_state(state, seed))
    }

    /// Rebuilds an agent around saved parameters with an empty buffer.
    pub fn from_state(state: AgentState<T>, seed: u64) -> Self {
        let layer = state.ip.as_ref().map(IpSetup::layer);
        Self {
            buffer: ReplayBuffer::new(state.cfg.buffer_capacity, substream(seed, "buffer")),
            layer,
            noise_rng: substream(seed, "policy_noise"),
            dropout_rng: substream(seed, "dropout"),
            state,
        }
    }

    pub fn cfg(&self) -> &SacConfig {
        &self.state.cfg
    }

    pub fn obs_dim(&self) -> usize {
        self.state.policy_spec.input.width()
    }

    pub fn action_dim(&self) -> usize {
        self.state.bounds.dim()
    }

    fn zeta_slot(&self, role: Role) -> Option<usize> {
        if self.state.zeta.is_empty() {
            None
        } else if self.state.cfg.shared_zeta {
            Some(0)
        } else {
            Some(match role {
                Role::Policy => 0,
                Role::Q1 => 1,
                Role::Q2 => 2,
            })
        }
    }

    /// IP parameters as seen by the policy network.
    pub fn current_ip(&self) -> Option<IpParams> {
        let ip = self.state.ip.as_ref()?;
        let mut p = ip.params.clone();
        if let Some(slot) = self.zeta_slot(Role::Policy) {
            p.raw = self.state.zeta[slot].get(0).value.to_f64();
        }
        Some(p)
    }

    /// Applies preprocessing (when configured) and the network.
    #[allow(clippy::too_many_arguments)]
    fn run_net(
        g: &mut Graph<T>,
        spec: &NetworkSpec,
        vars: &[Var],
        x: Var,
        layer: Option<&Arc<IpLayer>>,
        zeta: Option<Var>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let input = match layer {
            Some(layer) if spec.input.scan_width() > 0 => preprocess_input(g, x, &spec.input, zeta, layer)?,
            _ => x,
        };
        Ok(spec.forward(g, vars, input, train, rng)?)
    }

    fn noise(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.noise_rng.sample(StandardNormal)).collect()
    }

    fn check_obs(&self, len: usize, rows: usize) -> Result<()> {
        let expected = self.obs_dim() * rows;
        if len != expected {
            return Err(SacError::ObservationSize { expected, found: len });
        }
        Ok(())
    }

    /// Policy head `[rows, 2A]` in evaluation mode.
    pub fn policy_head(&mut self, obs: &[f64], rows: usize) -> Result<Vec<f64>> {
        self.check_obs(obs.len(), rows)?;
        let mut g = Graph::new();
        let vars = self.state.policy.bind(&mut g, false);
        let zeta = self
            .zeta_slot(Role::Policy)
            .map(|s| self.state.zeta[s].bind(&mut g, false)[0]);
        let x = g.constant(Tensor::from_f64(vec![rows, self.obs_dim()], obs));
        let out = Self::run_net(
            &mut g,
            &self.state.policy_spec,
            &vars,
            x,
            self.layer.as_ref(),
            zeta,
            false,
            &mut self.dropout_rng,
        )?;
        Ok(g.value(out).to_f64())
    }

    /// Target values `r + gamma (1 - d) (min_j Q_target_j(x', a') - alpha log pi(a'|x'))`
    /// with `a'` drawn from the current policy using noise `eps`.
    pub fn critic_targets_with_noise(&self, batch: &Batch, eps: &[f64]) -> Result<Vec<f64>> {
        let n = batch.size;
        self.check_obs(batch.x_next.len(), n)?;
        let st = &self.state;
        let mut g = Graph::new();
        let pv = st.policy.bind(&mut g, false);
        let t1 = st.q1_target.bind(&mut g, false);
        let t2 = st.q2_target.bind(&mut g, false);
        let z: Vec<Option<Var>> = [Role::Policy, Role::Q1, Role::Q2]
            .iter()
            .map(|&r| self.zeta_slot(r).map(|s| st.zeta[s].bind(&mut g, false)[0]))
            .collect();
        let mut unused = substream(0, "unused");
        let layer = self.layer.as_ref();
        let xn = g.constant(Tensor::from_f64(vec![n, self.obs_dim()], &batch.x_next));
        let head = Self::run_net(&mut g, &st.policy_spec, &pv, xn, layer, z[0], false, &mut unused)?;
        let s = sample_in_graph(&mut g, head, eps, &st.bounds, (st.cfg.log_std_min, st.cfg.log_std_max))?;
        let cin = g.concat_cols(&[xn, s.action])?;
        let q1 = Self::run_net(&mut g, &st.critic_spec, &t1, cin, layer, z[1], false, &mut unused)?;
        let q2 = Self::run_net(&mut g, &st.critic_spec, &t2, cin, layer, z[2], false, &mut unused)?;
        let qmin = g.min(q1, q2)?;
        let (qv, lp) = (g.value(qmin).to_f64(), g.value(s.log_prob).to_f64());
        let (gamma, alpha) = (st.cfg.gamma, st.cfg.alpha);
        Ok((0..n)
            .map(|i| batch.r[i] + gamma * (1.0 - batch.d[i]) * (qv[i] - alpha * lp[i]))
            .collect())
    }

    pub fn critic_targets(&mut self, batch: &Batch) -> Result<Vec<f64>> {
        let eps = self.noise(batch.size * self.action_dim());
        self.critic_targets_with_noise(batch, &eps)
    }

    /// One optimizer step on both critics (and their IP parameters) towards
    /// `targets`. Returns the summed mean squared errors.
    pub fn critic_update_towards(&mut self, batch: &Batch, targets: &[f64]) -> Result<f64> {
        let n = batch.size;
        self.check_obs(batch.x.len(), n)?;
        let mut g = Graph::new();
        let v1 = self.state.q1.bind(&mut g, true);
        let v2 = self.state.q2.bind(&mut g, true);
        let mut zvars: Vec<Option<Var>> = vec![None; self.state.zeta.len()];
        let mut zeta_for = |g: &mut Graph<T>, slot: Option<usize>, zeta: &[ParamSet<T>]| {
            slot.map(|s| *zvars[s].get_or_insert_with(|| zeta[s].bind(g, true)[0]))
        };
        let z1 = zeta_for(&mut g, self.zeta_slot(Role::Q1), &self.state.zeta);
        let z2 = zeta_for(&mut g, self.zeta_slot(Role::Q2), &self.state.zeta);
        let loss = Self::critic_loss(
            &self.state,
            self.layer.as_ref(),
            &mut g,
            [(&v1, z1), (&v2, z2)],
            batch,
            targets,
            true,
            &mut self.dropout_rng,
        )?;
        g.backward(loss)?;
        let st = &mut self.state;
        st.q1.accumulate_grads(&g, &v1);
        st.q2.accumulate_grads(&g, &v2);
        let touched: Vec<usize> = zvars.iter().enumerate().filter_map(|(i, v)| v.map(|_| i)).collect();
        for &s in &touched {
            st.zeta[s].accumulate_grads(&g, &[zvars[s].unwrap()]);
        }
        let adam = AdamConfig::with_lr(st.cfg.lr);
        let zeta_adam = AdamConfig::with_lr(st.cfg.zeta_lr.unwrap_or(st.cfg.lr));
        {
            let (zeta, rest) = (&mut st.zeta, (&mut st.q1, &mut st.q2));
            let mut sets: Vec<&mut ParamSet<T>> = vec![rest.0, rest.1];
            sets.extend(
                zeta.iter_mut()
                    .enumerate()
                    .filter(|(i, _)| touched.contains(i))
                    .map(|(_, z)| z),
            );
            clip_joint(&mut sets, st.cfg.grad_clip);
        }
        st.q1.adam_step(&adam);
        st.q2.adam_step(&adam);
        for &s in &touched {
            st.zeta[s].adam_step(&zeta_adam);
        }
        Ok(g.value(loss).item().as_f64())
    }

    /// Sum of both critics' mean squared errors against `targets`.
    #[allow(clippy::too_many_arguments)]
    fn critic_loss(
        st: &AgentState<T>,
        layer: Option<&Arc<IpLayer>>,
        g: &mut Graph<T>,
        critics: [(&[Var], Option<Var>); 2],
        batch: &Batch,
        targets: &[f64],
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let n = batch.size;
        let x = g.constant(Tensor::from_f64(vec![n, st.policy_spec.input.width()], &batch.x));
        let a = g.constant(Tensor::from_f64(vec![n, st.bounds.dim()], &batch.a));
        let cin = g.concat_cols(&[x, a])?;
        let y = g.constant(Tensor::from_f64(vec![n, 1], targets));
        let mut loss = None;
        for (vars, z) in critics {
            let q = Self::run_net(g, &st.critic_spec, vars, cin, layer, z, train, rng)?;
            let diff = g.sub(q, y)?;
            let sq = g.square(diff);
            let mse = g.mean(sq);
            loss = Some(match loss {
                None => mse,
                Some(l) => g.add(l, mse)?,
            });
        }
        Ok(loss.expect("two critics"))
    }

    pub fn critic_update(&mut self, batch: &Batch) -> Result<f64> {
        let targets = self.critic_targets(batch)?;
        self.critic_update_towards(batch, &targets)
    }

    /// Policy loss `mean(alpha log pi(a|x) - min_j Q_j(x, a))` for fixed
    /// noise, as a graph over trainable policy (and IP) parameters. Returns
    /// the graph, loss, policy variables, the trainable IP variable with its
    /// slot, and the mean log density.
    fn policy_loss_graph(&mut self, batch: &Batch, eps: &[f64], train: bool) -> Result<PolicyGraph<T>> {
        self.check_obs(batch.x.len(), batch.size)?;
        let st = &self.state;
        let mut g = Graph::new();
        let pv = st.policy.bind(&mut g, true);
        let pslot = self.zeta_slot(Role::Policy);
        let zp = pslot.map(|s| st.zeta[s].bind(&mut g, true)[0]);
        let zc = [self.zeta_slot(Role::Q1), self.zeta_slot(Role::Q2)];
        let (loss, mean_log_prob) = Self::policy_loss(
            st,
            self.layer.as_ref(),
            &mut g,
            &pv,
            zp,
            pslot,
            zc,
            batch,
            eps,
            train,
            &mut self.dropout_rng,
        )?;
        Ok(PolicyGraph {
            g,
            loss,
            policy_vars: pv,
            zeta: pslot.zip(zp),
            mean_log_prob,
        })
    }

    /// Builds the policy loss on `g` from bound policy variables `pv` and
    /// the policy's IP variable `zp` (slot `pslot`). Critic IP parameters in
    /// other slots enter as constants.
    #[allow(clippy::too_many_arguments)]
    fn policy_loss(
        st: &AgentState<T>,
        layer: Option<&Arc<IpLayer>>,
        g: &mut Graph<T>,
        pv: &[Var],
        zp: Option<Var>,
        pslot: Option<usize>,
        critic_slots: [Option<usize>; 2],
        batch: &Batch,
        eps: &[f64],
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, f64)> {
        let n = batch.size;
        let c1 = st.q1.bind(g, false);
        let c2 = st.q2.bind(g, false);
        let mut zc = |role: usize| match critic_slots[role] {
            Some(s) if Some(s) == pslot => zp,
            Some(s) => Some(st.zeta[s].bind(g, false)[0]),
            None => None,
        };
        let z1 = zc(0);
        let z2 = zc(1);
        let width = st.policy_spec.input.width();
        let x = g.constant(Tensor::from_f64(vec![n, width], &batch.x));
        let head = Self::run_net(g, &st.policy_spec, pv, x, layer, zp, train, rng)?;
        let s = sample_in_graph(g, head, eps, &st.bounds, (st.cfg.log_std_min, st.cfg.log_std_max))?;
        let cin = g.concat_cols(&[x, s.action])?;
        let mut unused = substream(0, "unused");
        let q1 = Self::run_net(g, &st.critic_spec, &c1, cin, layer, z1, false, &mut unused)?;
        let q2 = Self::run_net(g, &st.critic_spec, &c2, cin, layer, z2, false, &mut unused)?;
        let qmin = g.min(q1, q2)?;
        let scaled = g.scale(s.log_prob, T::lit(st.cfg.alpha));
        let diff = g.sub(scaled, qmin)?;
        let loss = g.mean(diff);
        let lp = g.value(s.log_prob).to_f64();
        Ok((loss, lp.iter().sum::<f64>() / lp.len() as f64))
    }

    /// One optimizer step on the policy (and its IP parameters) with the
    /// critics held fixed. Returns the loss and the mean log density.
    pub fn policy_update_with_noise(&mut self, batch: &Batch, eps: &[f64]) -> Result<(f64, f64)> {
        let PolicyGraph {
            mut g,
            loss,
            policy_vars,
            zeta,
            mean_log_prob,
        } = self.policy_loss_graph(batch, eps, true)?;
        g.backward(loss)?;
        let st = &mut self.state;
        st.policy.accumulate_grads(&g, &policy_vars);
        let adam = AdamConfig::with_lr(st.cfg.lr);
        match zeta {
            Some((slot, var)) => {
                st.zeta[slot].accumulate_grads(&g, &[var]);
                clip_joint(&mut [&mut st.policy, &mut st.zeta[slot]], st.cfg.grad_clip);
                st.zeta[slot].adam_step(&AdamConfig::with_lr(st.cfg.zeta_lr.unwrap_or(st.cfg.lr)));
            }
            None => clip_joint(&mut [&mut st.policy], st.cfg.grad_clip),
        }
        st.policy.adam_step(&adam);
        Ok((g.value(loss).item().as_f64(), mean_log_prob))
    }

    pub fn policy_update(&mut self, batch: &Batch) -> Result<(f64, f64)> {
        let eps = self.noise(batch.size * self.action_dim());
        self.policy_update_with_noise(batch, &eps)
    }

    /// `target = tau * online + (1 - tau) * target` for both critics.
    pub fn polyak_update(&mut self, tau: f64) {
        let st = &mut self.state;
        st.q1_target.polyak_from(&st.q1, tau);
        st.q2_target.polyak_from(&st.q2, tau);
    }

    /// Critic step, policy step, then target averaging, all on one batch.
    pub fn update_on(&mut self, batch: &Batch) -> Result<UpdateStats> {
        let critic_loss = self.critic_update(batch)?;
        let (policy_loss, log_prob) = self.policy_update(batch)?;
        self.polyak_update(self.state.cfg.tau);
        self.state.updates += 1;
        Ok(UpdateStats {
            critic_loss,
            policy_loss,
            log_prob,
        })
    }

    /// Sampled or deterministic action for one observation row.
    pub fn sample_action(&mut self, obs: &[f64], deterministic: bool) -> Result<Vec<f64>> {
        let head = self.policy_head(obs, 1)?;
        let a_dim = self.action_dim();
        let (lo, hi) = (self.state.cfg.log_std_min, self.state.cfg.log_std_max);
        let eps = if deterministic {
            vec![0.0; a_dim]
        } else {
            self.noise(a_dim)
        };
        let t: Vec<f64> = (0..a_dim)
            .map(|i| (head[i] + bounded_log_std(head[a_dim + i], lo, hi).exp() * eps[i]).tanh())
            .collect();
        Ok(self.state.bounds.scale(&t))
    }

    /// Deterministic copy of the current policy for evaluation.
    pub fn snapshot(&self) -> PolicySnapshot<T> {
        PolicySnapshot {
            spec: self.state.policy_spec.clone(),
            params: self.state.policy.values_only(),
            zeta: self.zeta_slot(Role::Policy).map(|s| self.state.zeta[s].values_only()),
            layer: self.layer.clone(),
            bounds: self.state.bounds.clone(),
            ip: self.current_ip(),
        }
    }

    /// Global gradient norm of the policy loss for fixed noise, without
    /// stepping. Dropout is disabled.
    pub fn policy_grad_norm(&mut self, batch: &Batch, eps: &[f64]) -> Result<f64> {
        let PolicyGraph {
            mut g,
            loss,
            policy_vars,
            ..
        } = self.policy_loss_graph(batch, eps, false)?;
        g.backward(loss)?;
        let mut probe = self.state.policy.values_only();
        probe.accumulate_grads(&g, &policy_vars);
        Ok(probe.grad_norm())
    }
}

impl SacAgent<f64> {
    /// Finite-difference check of the policy loss with respect to the
    /// policy parameters and the policy's IP parameters, for fixed noise and
    /// with dropout off.
    pub fn gradcheck_policy_loss(&self, batch: &Batch, eps: &[f64], cfg: &GradcheckConfig) -> Result<GradcheckReport> {
        self.check_obs(batch.x.len(), batch.size)?;
        let st = &self.state;
        let pslot = self.zeta_slot(Role::Policy);
        let mut params = st.policy.values_only();
        if let Some(s) = pslot {
            params.add("ip.zeta", st.zeta[s].get(0).value.clone());
        }
        let np = st.policy.len();
        let zc = [self.zeta_slot(Role::Q1), self.zeta_slot(Role::Q2)];
        let mut unused = substream(0, "unused");
        Ok(gradcheck(&params, cfg, |g, vars| {
            let zp = vars.get(np).copied();
            Self::policy_loss(
                st,
                self.layer.as_ref(),
                g,
                &vars[..np],
                zp,
                pslot,
                zc,
                batch,
                eps,
                false,
                &mut unused,
            )
            .map(|(loss, _)| loss)
            .map_err(|e| match e {
                SacError::Grad(e) => e,
                other => GradError::InvalidSpec(other.to_string()),
            })
        })?)
    }

    /// Finite-difference check of the critic loss against fixed targets with
    /// respect to both critics and every IP parameter set they read.
    pub fn gradcheck_critic_loss(
        &self,
        batch: &Batch,
        targets: &[f64],
        cfg: &GradcheckConfig,
    ) -> Result<GradcheckReport> {
        self.check_obs(batch.x.len(), batch.size)?;
        let st = &self.state;
        let mut params = st.q1.values_only();
        for i in 0..st.q2.len() {
            let p = st.q2.get(i);
            params.add(format!("q2.{}", p.name), p.value.clone());
        }
        let (n1, n2) = (st.q1.len(), st.q2.len());
        let slots = [self.zeta_slot(Role::Q1), self.zeta_slot(Role::Q2)];
        let mut used: Vec<usize> = slots.iter().flatten().copied().collect();
        used.dedup();
        for &s in &used {
            params.add(format!("ip.zeta{s}"), st.zeta[s].get(0).value.clone());
        }
        let mut unused = substream(0, "unused");
        Ok(gradcheck(&params, cfg, |g, vars| {
            let z = |slot: Option<usize>| slot.map(|s| vars[n1 + n2 + used.iter().position(|&u| u == s).unwrap()]);
            let critics = [(&vars[..n1], z(slots[0])), (&vars[n1..n1 + n2], z(slots[1]))];
            Self::critic_loss(st, self.layer.as_ref(), g, critics, batch, targets, false, &mut unused).map_err(|e| {
                match e {
                    SacError::Grad(e) => e,
                    other => GradError::InvalidSpec(other.to_string()),
                }
            })
        })?)
    }
}

struct PolicyGraph<T> {
    g: Graph<T>,
    loss: Var,
    policy_vars: Vec<Var>,
    zeta: Option<(usize, Var)>,
    mean_log_prob: f64,
}

impl<T: Scalar> Agent for SacAgent<T> {
    fn act(&mut self, obs: &[f64], deterministic: bool) -> Result<Vec<f64>> {
        self.sample_action(obs, deterministic)
    }

    fn observe(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    fn update(&mut self) -> Result<Option<UpdateStats>> {
        if self.buffer.len() < self.state.cfg.batch_size {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.state.cfg.batch_size)?;
        self.update_on(&batch).map(Some)
    }

    fn ip_params(&self) -> Option<IpParams> {
        self.current_ip()
    }
}

/// Frozen deterministic policy.
#[derive(Debug, Clone)]
pub struct PolicySnapshot<T: Scalar> {
    spec: NetworkSpec,
    params: ParamSet<T>,
    zeta: Option<ParamSet<T>>,
    layer: Option<Arc<IpLayer>>,
    bounds: ActionBounds,
    ip: Option<IpParams>,
}

impl<T: Scalar> Agent for PolicySnapshot<T> {
    fn act(&mut self, obs: &[f64], _deterministic: bool) -> Result<Vec<f64>> {
        let width = self.spec.input.width();
        if obs.len() != width {
            return Err(SacError::ObservationSize {
                expected: width,
                found: obs.len(),
            });
        }
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let zeta = self.zeta.as_ref().map(|z| z.bind(&mut g, false)[0]);
        let x = g.constant(Tensor::from_f64(vec![1, width], obs));
        let mut unused = substream(0, "unused");
        let out = SacAgent::<T>::run_net(
            &mut g,
            &self.spec,
            &vars,
            x,
            self.layer.as_ref(),
            zeta,
            false,
            &mut unused,
        )?;
        let head = g.value(out).to_f64();
        let t: Vec<f64> = head[..self.bounds.dim()].iter().map(|m| m.tanh()).collect();
        Ok(self.bounds.scale(&t))
    }

    fn ip_params(&self) -> Option<IpParams> {
        self.ip.clone()
    }
}
