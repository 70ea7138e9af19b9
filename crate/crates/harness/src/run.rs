//! Training runs and suite evaluation.
//!
//! A run directory holds `config.resolved.toml`, `learning_curve.csv`,
//! `train_log.csv`, `episodes.csv`, `checkpoint.json` and
//! `checkpoint_best.json`. The first is overwritten at every evaluation, so
//! it always matches the last learning-curve row. The second holds the agent
//! at the record with the highest success rate on the first scenario; ties
//! go to the higher mean score, then to the earlier record.
//!
//! `train_log.csv`: `step,episode,updates,critic_loss,policy_loss,log_prob,zeta_mean,zeta_min,zeta_max,buffer`,
//! losses averaged over the updates since the previous row. The `zeta_*`
//! columns summarize the policy's constrained IP values over beams and are
//! empty for families without parameters.
//!
//! `episodes.csv`: `episode,mode,start_step,steps,outcome,return`.

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ipnav_core::gridworld::OccupancyGrid;
use ipnav_core::nav_env::{run_episode, sample_task, EpisodeResult, Mode, NavEnv, Outcome, TaskSuite};
use ipnav_core::rng::substream;
use ipnav_core::sac::{Agent, SacAgent};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, Scenario};
use crate::metrics::{score, EvalRecord, LearningCurve, ScenarioStats};
use crate::{write_file, HarnessError, Result};

/// File name of the best-record checkpoint in a run directory.
pub const BEST_CHECKPOINT: &str = "checkpoint_best.json";

/// Runs every task of `suite` once with the deterministic policy.
pub fn evaluate_suite<A: Agent + ?Sized>(
    agent: &mut A,
    env: &mut NavEnv,
    suite: &TaskSuite,
) -> Result<Vec<EpisodeResult>> {
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    suite
        .tasks
        .iter()
        .map(|task| {
            run_episode(env, agent, task, Mode::Eval, &mut unused, |_, _| {
                Ok::<_, HarnessError>(ControlFlow::Continue(()))
            })
        })
        .collect()
}

struct EvalSet {
    scenarios: Vec<Scenario>,
    envs: Vec<NavEnv>,
    t_max: usize,
}

impl EvalSet {
    fn new(cfg: &ExperimentConfig, scenarios: Vec<Scenario>) -> Result<Self> {
        let envs = scenarios
            .iter()
            .map(|s| NavEnv::new(s.grid.clone(), cfg.env.clone()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            scenarios,
            envs,
            t_max: cfg.env.t_max,
        })
    }

    fn names(&self) -> Vec<String> {
        self.scenarios.iter().map(|s| s.name.clone()).collect()
    }

    fn record<A: Agent + ?Sized>(
        &mut self,
        agent: &mut A,
        step: usize,
    ) -> Result<(EvalRecord, Vec<Vec<EpisodeResult>>)> {
        let mut stats = Vec::new();
        let mut episodes = Vec::new();
        for (s, env) in self.scenarios.iter().zip(&mut self.envs) {
            let eps = evaluate_suite(agent, env, &s.suite)?;
            stats.push(ScenarioStats::from_episodes(&s.name, &eps, self.t_max));
            episodes.push(eps);
        }
        Ok((EvalRecord { step, scenarios: stats }, episodes))
    }
}

#[derive(Default)]
struct LogAccum {
    updates: usize,
    critic: f64,
    policy: f64,
    log_prob: f64,
}

fn zeta_summary(agent: &SacAgent<f32>) -> String {
    let (Some(ip), Some(setup)) = (agent.current_ip(), agent.state.ip.as_ref()) else {
        return ",,".into();
    };
    let vals: Vec<f64> = ip.constrained(&setup.y_min);
    if vals.is_empty() {
        return ",,".into();
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!("{mean},{min},{max}")
}

/// Builds a fresh agent for `cfg` and `seed`.
pub fn build_agent(cfg: &ExperimentConfig, seed: u64) -> Result<SacAgent<f32>> {
    let (policy, critic) = cfg.model.specs(&cfg.env, 2)?;
    Ok(SacAgent::new(
        cfg.sac.clone(),
        policy,
        critic,
        cfg.action_bounds(),
        Some(cfg.ip_setup()?),
        seed,
    )?)
}

/// Options that do not affect results.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    /// Print a progress line to stderr at every evaluation.
    pub progress: bool,
}

/// Trains one seed and writes the run directory `out`. Returns the
/// learning curve.
pub fn train(cfg: &ExperimentConfig, seed: u64, out: &Path, opts: TrainOptions) -> Result<LearningCurve> {
    cfg.validate()?;
    let grid = Arc::new(cfg.load_train_map()?);
    let mut eval = EvalSet::new(cfg, cfg.load_scenarios()?)?;
    let mut env = NavEnv::new(grid.clone(), cfg.env.clone())?;
    let mut agent = build_agent(cfg, seed)?;
    if env.obs_dim() != agent.obs_dim() {
        return Err(HarnessError::Mismatch(format!(
            "environment emits {} values, agent expects {}",
            env.obs_dim(),
            agent.obs_dim()
        )));
    }

    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut resolved = cfg.clone();
    resolved.seeds = vec![seed];
    write_file(out.join("config.resolved.toml"), resolved.to_toml())?;
    let curve_path = out.join("learning_curve.csv");
    let ck_path = out.join("checkpoint.json");
    let best_path = out.join(BEST_CHECKPOINT);

    let mut curve = LearningCurve::new(eval.names());
    let mut best: Option<(f64, f64)> = None;
    let mut save_eval = |agent: &SacAgent<f32>, curve: &mut LearningCurve, record: EvalRecord| -> Result<()> {
        if opts.progress {
            let parts: Vec<String> = record
                .scenarios
                .iter()
                .map(|s| format!("{} {:.2}/{:.2}", s.name, s.success_rate, s.mean_score))
                .collect();
            eprintln!("[seed {seed}] step {}: {}", record.step, parts.join(", "));
        }
        let step = record.step;
        let key = record.scenarios.first().map(|s| (s.success_rate, s.mean_score));
        curve.push(record)?;
        write_file(&curve_path, curve.to_csv())?;
        let ck = Checkpoint::new(step, seed, resolved.clone(), agent.state.clone());
        if key.is_some_and(|k| best.is_none_or(|b| k > b)) {
            best = key;
            ck.save(&best_path)?;
        }
        ck.save(&ck_path)
    };

    let (rec, _) = eval.record(&mut agent.snapshot(), 0)?;
    save_eval(&agent, &mut curve, rec)?;

    let total = cfg.train.total_steps;
    let (period, log_every) = (cfg.train.eval_period, cfg.train.log_every);
    let mut task_rng = substream(seed, "tasks");
    let mut action_rng = substream(seed, "random_actions");
    let map_id = cfg.train_map.display().to_string();
    let mut log =
        String::from("step,episode,updates,critic_loss,policy_loss,log_prob,zeta_mean,zeta_min,zeta_max,buffer\n");
    let mut episodes = String::from("episode,mode,start_step,steps,outcome,return\n");
    let mut step = 0usize;
    let mut episode = 0usize;
    let mut acc = LogAccum::default();

    while step < total {
        let task = sample_task(&grid, &cfg.env, &map_id, &mut task_rng)?;
        let mode = if episode < cfg.train.random_episodes {
            Mode::Random
        } else {
            Mode::Train
        };
        let start_step = step;
        let result = run_episode(&mut env, &mut agent, &task, mode, &mut action_rng, |agent, ev| {
            step += 1;
            if let Some(u) = ev.update {
                acc.updates += 1;
                acc.critic += u.critic_loss;
                acc.policy += u.policy_loss;
                acc.log_prob += u.log_prob;
            }
            if step.is_multiple_of(log_every) {
                let n = acc.updates.max(1) as f64;
                let _ = writeln!(
                    log,
                    "{step},{episode},{},{},{},{},{},{}",
                    acc.updates,
                    acc.critic / n,
                    acc.policy / n,
                    acc.log_prob / n,
                    zeta_summary(agent),
                    agent.buffer.len()
                );
                acc = LogAccum::default();
            }
            if step.is_multiple_of(period) {
                let (rec, _) = eval.record(&mut agent.snapshot(), step)?;
                save_eval(agent, &mut curve, rec)?;
            }
            Ok::<_, HarnessError>(if step >= total {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            })
        })?;
        let mode_name = if mode == Mode::Random { "random" } else { "train" };
        let outcome = if result.interrupted {
            "interrupted".to_string()
        } else {
            result.outcome.to_string()
        };
        let _ = writeln!(
            episodes,
            "{episode},{mode_name},{start_step},{},{outcome},{}",
            result.steps, result.ret
        );
        episode += 1;
    }
    write_file(out.join("train_log.csv"), log)?;
    write_file(out.join("episodes.csv"), episodes)?;
    Ok(curve)
}

/// Per-task result of an evaluation.
#[derive(Debug, Clone)]
pub struct TaskResult {
    pub scenario: String,
    pub index: usize,
    pub episode: EpisodeResult,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub record: EvalRecord,
    pub tasks: Vec<TaskResult>,
}

impl EvalReport {
    /// `scenario,task,outcome,steps,score,return,path_length,straight_line,path_ratio`.
    pub fn tasks_csv(&self) -> String {
        let mut out = String::from("scenario,task,outcome,steps,score,return,path_length,straight_line,path_ratio\n");
        for t in &self.tasks {
            let e = &t.episode;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                t.scenario,
                t.index,
                e.outcome,
                e.steps,
                t.score,
                e.ret,
                e.path_length(),
                e.straight_line,
                e.path_length_ratio()
            );
        }
        out
    }

    /// Mean path-length ratio over the successful tasks of a scenario.
    pub fn mean_path_ratio(&self, scenario: &str) -> Option<f64> {
        let ratios: Vec<f64> = self
            .tasks
            .iter()
            .filter(|t| t.scenario == scenario && t.episode.outcome == Outcome::Success)
            .map(|t| t.episode.path_length_ratio())
            .collect();
        (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
    }

    /// Writes `eval_tasks.csv`, `eval_record.csv` and one trajectory CSV per
    /// task under `trajectories/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(dir.join("eval_tasks.csv"), self.tasks_csv())?;
        let mut curve = LearningCurve::new(self.record.scenarios.iter().map(|s| s.name.clone()).collect());
        curve.push(self.record.clone())?;
        write_file(dir.join("eval_record.csv"), curve.to_csv())?;
        for t in &self.tasks {
            let name = format!("{}_{:03}.csv", t.scenario, t.index);
            write_file(dir.join("trajectories").join(name), t.episode.trajectory_csv())?;
        }
        Ok(())
    }
}

/// Evaluates the checkpointed policy on the given scenarios.
pub fn evaluate_checkpoint(ck: &Checkpoint, scenarios: Vec<Scenario>) -> Result<EvalReport> {
    let cfg = &ck.config;
    let mut snapshot = SacAgent::from_state(ck.agent.clone(), ck.seed).snapshot();
    let width = ck.agent.policy_spec.input.width();
    let t_max = cfg.env.t_max;
    let mut stats = Vec::new();
    let mut tasks = Vec::new();
    for s in scenarios {
        let mut env = NavEnv::new(s.grid.clone(), cfg.env.clone())?;
        if env.obs_dim() != width {
            return Err(HarnessError::Mismatch(format!(
                "scenario {} yields {} observation values, checkpoint expects {width}",
                s.name,
                env.obs_dim()
            )));
        }
        let eps = evaluate_suite(&mut snapshot, &mut env, &s.suite)?;
        stats.push(ScenarioStats::from_episodes(&s.name, &eps, t_max));
        for (index, episode) in eps.into_iter().enumerate() {
            tasks.push(TaskResult {
                scenario: s.name.clone(),
                index,
                score: score(episode.outcome, episode.steps, t_max),
                episode,
            });
        }
    }
    Ok(EvalReport {
        record: EvalRecord {
            step: ck.step,
            scenarios: stats,
        },
        tasks,
    })
}

/// A scenario from a suite file. The map comes from the suite's `map` line
/// (relative to the suite file) unless `map` is given.
pub fn scenario_from_suite(suite_path: &Path, map: Option<&Path>, default_radius: f64) -> Result<Scenario> {
    let suite = TaskSuite::load(suite_path, default_radius)?;
    let map_path: PathBuf = match (map, &suite.map) {
        (Some(m), _) => m.to_path_buf(),
        (None, Some(m)) => {
            let p = PathBuf::from(m);
            if p.is_relative() {
                suite_path.parent().unwrap_or(Path::new(".")).join(p)
            } else {
                p
            }
        }
        (None, None) => {
            return Err(HarnessError::Config(format!("{} names no map", suite_path.display())));
        }
    };
    let grid =
        OccupancyGrid::load(&map_path).map_err(|e| HarnessError::Config(format!("{}: {e}", map_path.display())))?;
    let name = suite_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "suite".into());
    Ok(Scenario {
        name,
        grid: Arc::new(grid),
        suite,
    })
}
