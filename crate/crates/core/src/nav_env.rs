//! Goal-reaching task on an occupancy grid: observation assembly, reward,
//! termination, task sampling and the interaction loop.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::ops::ControlFlow;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{
    collision_check, normalize_angle, scan, step_kinematics, DiffDriveState, Footprint, GridError, LidarSpec,
    OccupancyGrid, Pose, RobotBody, VelocityLimits,
};
use crate::lidar_prep::{ip_forward, min_pool, min_pool_values, IpParams, PrepError};
use crate::sac::{Agent, SacError, Transition, UpdateStats};
use crate::tinygrad::InputLayout;

/// Draws allowed when sampling a task before giving up.
pub const MAX_TASK_DRAWS: usize = 10_000;

/// Extra observation values after the scans: goal distance, goal bearing,
/// linear and angular velocity.
pub const EXTRA_FEATURES: usize = 4;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called after the episode ended")]
    EpisodeDone,
    #[error("start pose ({x:.3}, {y:.3}) is in collision")]
    StartInCollision { x: f64, y: f64 },
    #[error("no free task found in {0} draws")]
    NoFreeSpace(usize),
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("task suite line {line}: {msg}")]
    Suite { line: usize, msg: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Agent(#[from] SacError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EnvError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavConfig {
    /// Control period in seconds.
    pub dt: f64,
    pub t_max: usize,
    pub success_radius: f64,
    /// Smallest start-to-goal distance accepted by the task sampler.
    pub min_goal_distance: f64,
    pub c1: f64,
    pub r_success: f64,
    pub r_crash: f64,
    pub limits: VelocityLimits,
    /// Allow negative linear velocity commands.
    pub allow_reverse: bool,
    pub lidar: LidarSpec,
    pub body: RobotBody,
    pub pool_window: usize,
    /// Number of most recent scans in each observation.
    pub stack: usize,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            dt: 0.2,
            t_max: 200,
            success_radius: 0.3,
            min_goal_distance: 1.0,
            c1: 2.0,
            r_success: 10.0,
            r_crash: -10.0,
            limits: VelocityLimits::default(),
            allow_reverse: false,
            lidar: LidarSpec {
                fov: 1.5 * PI,
                n_beams: 180,
                max_range: 30.0,
            },
            body: RobotBody {
                shape: Footprint::Circle { radius: 0.2 },
                lidar_offset: [0.0, 0.0],
            },
            pool_window: 6,
            stack: 1,
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EnvError::Config(m));
        self.lidar.validate()?;
        self.body.validate()?;
        if self.pool_window == 0 || !self.lidar.n_beams.is_multiple_of(self.pool_window) {
            return bad(format!(
                "pool window {} does not divide {} beams",
                self.pool_window, self.lidar.n_beams
            ));
        }
        if !(self.dt > 0.0) || self.t_max == 0 || self.stack == 0 {
            return bad("dt, t_max and stack must be positive".into());
        }
        if !(self.success_radius > 0.0) || self.min_goal_distance < self.success_radius {
            return bad("need 0 < success_radius <= min_goal_distance".into());
        }
        if !(self.limits.v_max > 0.0 && self.limits.omega_max > 0.0) {
            return bad("velocity limits must be positive".into());
        }
        Ok(())
    }

    pub fn pooled_beams(&self) -> usize {
        self.lidar.n_beams / self.pool_window
    }

    pub fn input_layout(&self) -> InputLayout {
        InputLayout {
            scan_len: self.pooled_beams(),
            stack: self.stack,
            extra: EXTRA_FEATURES,
        }
    }

    pub fn v_min(&self) -> f64 {
        if self.allow_reverse {
            -self.limits.v_max
        } else {
            0.0
        }
    }

    /// Action box as `(low, high)` for `(v, omega)`.
    pub fn action_box(&self) -> (Vec<f64>, Vec<f64>) {
        (
            vec![self.v_min(), -self.limits.omega_max],
            vec![self.limits.v_max, self.limits.omega_max],
        )
    }

    /// Per pooled beam `(Y_min, Y_max)`, fixed by the body and sensor.
    pub fn scan_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let angles = self.lidar.beam_angles();
        let d_min: Vec<f64> = angles
            .iter()
            .map(|&a| self.body.footprint_min_range(a).min(self.lidar.max_range))
            .collect();
        let d_max = vec![self.lidar.max_range; angles.len()];
        (
            min_pool_values(&d_min, self.pool_window).expect("validated window"),
            min_pool_values(&d_max, self.pool_window).expect("validated window"),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavTask {
    pub map_id: String,
    pub start: Pose,
    pub goal: [f64; 2],
    pub success_radius: f64,
}

impl NavTask {
    pub fn straight_line(&self) -> f64 {
        (self.goal[0] - self.start.x).hypot(self.goal[1] - self.start.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Crash,
    Timeout,
}

impl Outcome {
    /// Whether the transition into this outcome ends the return. Timeouts
    /// truncate the episode without making the state terminal.
    pub fn is_terminal(self) -> bool {
        !matches!(self, Outcome::Timeout)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Success => "success",
            Outcome::Crash => "crash",
            Outcome::Timeout => "timeout",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Latest pooled distances `y`.
    pub scan: Vec<f64>,
    /// The last `stack` pooled scans, oldest first.
    pub stacked: Vec<f64>,
    /// Latest scan after the IP mapping currently in use.
    pub p: Vec<f64>,
    pub d_g: f64,
    /// Goal bearing in the robot frame, in `(-pi, pi]`.
    pub phi_g: f64,
    pub v: f64,
    pub omega: f64,
}

/// Scale factors for the non-scan observation values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsScale {
    pub distance: f64,
    pub v_max: f64,
    pub omega_max: f64,
}

impl Observation {
    /// Network input row: stacked raw pooled scans (the network applies the
    /// IP layer itself), then goal distance over the map diagonal, bearing
    /// over pi, and the velocities over their bounds.
    pub fn to_input(&self, scale: &ObsScale) -> Vec<f64> {
        let mut row = self.stacked.clone();
        row.extend_from_slice(&[
            self.d_g / scale.distance,
            self.phi_g / PI,
            self.v / scale.v_max,
            self.omega / scale.omega_max,
        ]);
        row
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub outcome: Option<Outcome>,
}

pub struct NavEnv {
    grid: Arc<OccupancyGrid>,
    cfg: NavConfig,
    scale: ObsScale,
    y_min: Vec<f64>,
    y_max: Vec<f64>,
    ip: Option<IpParams>,
    state: DiffDriveState,
    goal: [f64; 2],
    success_radius: f64,
    t: usize,
    done: bool,
    history: VecDeque<Vec<f64>>,
}

impl NavEnv {
    pub fn new(grid: Arc<OccupancyGrid>, cfg: NavConfig) -> Result<Self> {
        cfg.validate()?;
        let (y_min, y_max) = cfg.scan_bounds();
        let scale = ObsScale {
            distance: grid.diagonal(),
            v_max: cfg.limits.v_max,
            omega_max: cfg.limits.omega_max,
        };
        Ok(Self {
            grid,
            scale,
            y_min,
            y_max,
            ip: None,
            state: DiffDriveState::at_rest(Pose::default(), cfg.limits),
            goal: [0.0, 0.0],
            success_radius: cfg.success_radius,
            t: 0,
            done: true,
            history: VecDeque::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &NavConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Arc<OccupancyGrid> {
        &self.grid
    }

    pub fn scale(&self) -> &ObsScale {
        &self.scale
    }

    pub fn scan_bounds(&self) -> (&[f64], &[f64]) {
        (&self.y_min, &self.y_max)
    }

    pub fn obs_dim(&self) -> usize {
        self.cfg.input_layout().width()
    }

    /// IP parameters used to fill [`Observation::p`].
    pub fn set_ip_params(&mut self, ip: Option<IpParams>) {
        self.ip = ip;
    }

    pub fn state(&self) -> &DiffDriveState {
        &self.state
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn goal_distance(&self) -> f64 {
        let p = self.state.pose;
        (self.goal[0] - p.x).hypot(self.goal[1] - p.y)
    }

    pub fn goal_reached(&self) -> bool {
        self.goal_distance() < self.success_radius
    }

    /// Pooled scan at the current pose. If the mount point is inside an
    /// obstacle (possible only after a crash) every beam reads its minimum.
    fn pooled_scan(&self) -> Result<Vec<f64>> {
        match scan(&self.grid, &self.state.pose, &self.cfg.body, &self.cfg.lidar) {
            Ok(frame) => Ok(min_pool(&frame, self.cfg.pool_window)?.values),
            Err(GridError::InvalidRayOrigin { .. }) => Ok(self.y_min.clone()),
            Err(e) => Err(e.into()),
        }
    }

    fn observe(&self) -> Observation {
        let scan = self.history.back().cloned().unwrap_or_default();
        let stacked: Vec<f64> = self.history.iter().flatten().copied().collect();
        let p = match &self.ip {
            Some(ip) => {
                let pooled = crate::lidar_prep::PooledScan {
                    values: scan.clone(),
                    y_min: self.y_min.clone(),
                    y_max: self.y_max.clone(),
                    window: self.cfg.pool_window,
                };
                ip_forward(&pooled, ip)
            }
            None => scan.clone(),
        };
        let pose = self.state.pose;
        let (dx, dy) = (self.goal[0] - pose.x, self.goal[1] - pose.y);
        Observation {
            scan,
            stacked,
            p,
            d_g: dx.hypot(dy),
            phi_g: normalize_angle(dy.atan2(dx) - pose.theta),
            v: self.state.v,
            omega: self.state.omega,
        }
    }

    pub fn reset(&mut self, task: &NavTask) -> Result<Observation> {
        if collision_check(&self.grid, &task.start, &self.cfg.body) {
            return Err(EnvError::StartInCollision {
                x: task.start.x,
                y: task.start.y,
            });
        }
        self.state = DiffDriveState::at_rest(task.start, self.cfg.limits);
        self.goal = task.goal;
        self.success_radius = task.success_radius;
        self.t = 0;
        self.done = false;
        let first = self.pooled_scan()?;
        self.history = std::iter::repeat_n(first, self.cfg.stack).collect();
        Ok(self.observe())
    }

    /// Applies `(v, omega)` for one control period.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let (lo, hi) = self.cfg.action_box();
        let v = action.first().copied().unwrap_or(0.0).clamp(lo[0], hi[0]);
        let w = action.get(1).copied().unwrap_or(0.0).clamp(lo[1], hi[1]);
        let d_before = self.goal_distance();
        self.state = step_kinematics(&self.state, (v, w), self.cfg.dt);
        self.t += 1;
        let d_after = self.goal_distance();

        let (reward, outcome) = if collision_check(&self.grid, &self.state.pose, &self.cfg.body) {
            (self.cfg.r_crash, Some(Outcome::Crash))
        } else if d_after < self.success_radius {
            (self.cfg.r_success, Some(Outcome::Success))
        } else {
            let dense = self.cfg.c1 * (d_before - d_after);
            (dense, (self.t >= self.cfg.t_max).then_some(Outcome::Timeout))
        };
        self.done = outcome.is_some();
        let scan = self.pooled_scan()?;
        self.history.pop_front();
        self.history.push_back(scan);
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done: self.done,
            outcome,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Stochastic policy; transitions stored and one update per step.
    Train,
    /// Deterministic policy; nothing stored.
    Eval,
    /// Uniform random actions; transitions stored, no updates.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajPoint {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    /// Steps taken, `T_s`.
    pub steps: usize,
    pub ret: f64,
    /// Poses visited, starting with the reset pose (reward 0).
    pub trajectory: Vec<TrajPoint>,
    pub straight_line: f64,
    pub transitions_stored: usize,
    /// The hook stopped the episode before it ended; `outcome` is then
    /// `Timeout`.
    pub interrupted: bool,
}

impl EpisodeResult {
    pub fn path_length(&self) -> f64 {
        self.trajectory
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }

    /// Travelled distance over start-to-goal distance.
    pub fn path_length_ratio(&self) -> f64 {
        self.path_length() / self.straight_line
    }

    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("step,x,y,theta,v,omega,reward\n");
        for p in &self.trajectory {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                p.step, p.x, p.y, p.theta, p.v, p.omega, p.reward
            );
        }
        out
    }
}

/// Passed to the per-step hook of [`run_episode`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEvent {
    pub t: usize,
    pub reward: f64,
    pub done: bool,
    pub update: Option<UpdateStats>,
}

fn traj_point(step: usize, s: &DiffDriveState, reward: f64) -> TrajPoint {
    TrajPoint {
        step,
        x: s.pose.x,
        y: s.pose.y,
        theta: s.pose.theta,
        v: s.v,
        omega: s.omega,
        reward,
    }
}

/// Runs one episode. The hook sees the agent after every step (after the
/// update in train mode), e.g. to evaluate snapshots mid-episode, and can
/// stop the episode by returning `ControlFlow::Break`.
pub fn run_episode<A, R, H, E>(
    env: &mut NavEnv,
    agent: &mut A,
    task: &NavTask,
    mode: Mode,
    rng: &mut R,
    mut hook: H,
) -> std::result::Result<EpisodeResult, E>
where
    A: Agent + ?Sized,
    R: Rng + ?Sized,
    H: FnMut(&mut A, &StepEvent) -> std::result::Result<ControlFlow<()>, E>,
    E: From<EnvError>,
{
    if mode != Mode::Random {
        env.set_ip_params(agent.ip_params());
    }
    let mut obs = env.reset(task)?;
    let mut result = EpisodeResult {
        outcome: Outcome::Timeout,
        steps: 0,
        ret: 0.0,
        trajectory: vec![traj_point(0, env.state(), 0.0)],
        straight_line: task.straight_line(),
        transitions_stored: 0,
        interrupted: false,
    };
    if env.goal_reached() {
        result.outcome = Outcome::Success;
        return Ok(result);
    }
    let (lo, hi) = env.config().action_box();
    let scale = *env.scale();
    loop {
        let x = obs.to_input(&scale);
        let action = match mode {
            Mode::Random => lo.iter().zip(&hi).map(|(&l, &h)| rng.random_range(l..h)).collect(),
            Mode::Train => agent.act(&x, false).map_err(EnvError::from)?,
            Mode::Eval => agent.act(&x, true).map_err(EnvError::from)?,
        };
        let step = env.step(&action)?;
        result.ret += step.reward;
        result.steps = env.t();
        result.trajectory.push(traj_point(env.t(), env.state(), step.reward));
        let mut update = None;
        if mode != Mode::Eval {
            let d = if step.outcome.is_some_and(Outcome::is_terminal) {
                1.0
            } else {
                0.0
            };
            agent.observe(Transition {
                x,
                a: action,
                r: step.reward,
                x_next: step.obs.to_input(&scale),
                d,
            });
            result.transitions_stored += 1;
            if mode == Mode::Train {
                update = agent.update().map_err(EnvError::from)?;
            }
        }
        let flow = hook(
            agent,
            &StepEvent {
                t: env.t(),
                reward: step.reward,
                done: step.done,
                update,
            },
        )?;
        if let Some(outcome) = step.outcome {
            result.outcome = outcome;
            return Ok(result);
        }
        if flow.is_break() {
            result.interrupted = true;
            return Ok(result);
        }
        obs = step.obs;
    }
}

/// Rejection-samples a collision-free start pose and a reachable goal.
pub fn sample_task<R: Rng + ?Sized>(
    grid: &OccupancyGrid,
    cfg: &NavConfig,
    map_id: &str,
    rng: &mut R,
) -> Result<NavTask> {
    let (w, h) = grid.extent();
    let [ox, oy] = grid.origin();
    let mut draws = 0;
    let draw_free = |rng: &mut R, draws: &mut usize| -> Option<Pose> {
        while *draws < MAX_TASK_DRAWS {
            *draws += 1;
            let pose = Pose::new(
                ox + rng.random_range(0.0..w),
                oy + rng.random_range(0.0..h),
                rng.random_range(-PI..PI),
            );
            if grid.is_free_point(pose.x, pose.y) && !collision_check(grid, &pose, &cfg.body) {
                return Some(pose);
            }
        }
        None
    };
    let start = draw_free(rng, &mut draws).ok_or(EnvError::NoFreeSpace(MAX_TASK_DRAWS))?;
    while draws < MAX_TASK_DRAWS {
        let Some(goal) = draw_free(rng, &mut draws) else { break };
        if (goal.x - start.x).hypot(goal.y - start.y) > cfg.min_goal_distance {
            return Ok(NavTask {
                map_id: map_id.to_string(),
                start,
                goal: [goal.x, goal.y],
                success_radius: cfg.success_radius,
            });
        }
    }
    Err(EnvError::NoFreeSpace(MAX_TASK_DRAWS))
}

/// Fixed list of tasks on one map.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSuite {
    pub map: Option<String>,
    pub tasks: Vec<NavTask>,
}

impl TaskSuite {
    pub fn generate<R: Rng + ?Sized>(
        grid: &OccupancyGrid,
        cfg: &NavConfig,
        map_id: &str,
        n: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let tasks = (0..n)
            .map(|_| sample_task(grid, cfg, map_id, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            map: Some(map_id.to_string()),
            tasks,
        })
    }

    /// Parses the suite format: optional `map <path>` and
    /// `success_radius <r>` lines, then one task per line as
    /// `start_x start_y start_theta goal_x goal_y`. `#` starts a comment.
    pub fn parse(text: &str, default_radius: f64) -> Result<Self> {
        let mut map = None;
        let mut radius = default_radius;
        let mut tasks = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| EnvError::Suite { line: i + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields[0] {
                "map" if fields.len() == 2 => map = Some(fields[1].to_string()),
                "success_radius" if fields.len() == 2 => {
                    radius = fields[1]
                        .parse()
                        .map_err(|_| err(format!("bad radius {}", fields[1])))?;
                }
                _ => {
                    if fields.len() != 5 {
                        return Err(err(format!("expected 5 numbers, found {}", fields.len())));
                    }
                    let v = fields
                        .iter()
                        .map(|f| f.parse::<f64>().map_err(|_| err(format!("bad number {f}"))))
                        .collect::<Result<Vec<_>>>()?;
                    tasks.push(NavTask {
                        map_id: map.clone().unwrap_or_default(),
                        start: Pose::new(v[0], v[1], v[2]),
                        goal: [v[3], v[4]],
                        success_radius: radius,
                    });
                }
            }
        }
        Ok(Self { map, tasks })
    }

    pub fn load(path: impl AsRef<Path>, default_radius: f64) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, default_radius)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(m) = &self.map {
            let _ = writeln!(out, "map {m}");
        }
        if let Some(t) = self.tasks.first() {
            let _ = writeln!(out, "success_radius {}", t.success_radius);
        }
        for t in &self.tasks {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                t.start.x, t.start.y, t.start.theta, t.goal[0], t.goal[1]
            );
        }
        out
    }
}
