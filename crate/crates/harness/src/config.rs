//! Experiment configuration (TOML).
//!
//! Relative paths are resolved against the directory holding the config
//! file. Everything except `train_map` has a default, so a config only needs
//! to state what differs.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ipnav_core::gridworld::OccupancyGrid;
use ipnav_core::lidar_prep::{IpFamily, IpParams, Sharing};
use ipnav_core::nav_env::{NavConfig, TaskSuite};
use ipnav_core::rng::substream;
use ipnav_core::sac::{ActionBounds, IpSetup, SacConfig};
use ipnav_core::tinygrad::{Activation, ModelId, NetworkSpec};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpConfig {
    pub family: String,
    #[serde(default = "default_sharing")]
    pub sharing: Sharing,
}

fn default_sharing() -> Sharing {
    Sharing::Shared
}

impl IpConfig {
    pub fn family(&self) -> Result<IpFamily> {
        IpFamily::from_str(&self.family).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

impl Default for IpConfig {
    fn default() -> Self {
        Self {
            family: "IPAPRec".into(),
            sharing: Sharing::Shared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `Model_0` .. `Model_3`, or `custom` for an MLP of `hidden` widths.
    pub id: String,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Dropout rate; unset keeps the model's default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    /// Apply dropout in the critics as well as the policy.
    pub critic_dropout: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            id: "Model_3".into(),
            hidden: Vec::new(),
            activation: Activation::LeakyRelu { slope: 0.01 },
            dropout: None,
            critic_dropout: false,
        }
    }
}

impl ModelConfig {
    pub fn model_id(&self) -> Result<ModelId> {
        ModelId::from_str(&self.id).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Policy and critic specs for the given observation layout.
    pub fn specs(&self, nav: &NavConfig, action_dim: usize) -> Result<(NetworkSpec, NetworkSpec)> {
        let id = self.model_id()?;
        let p_in = nav.input_layout();
        let mut c_in = p_in;
        c_in.extra += action_dim;
        let rate = self.dropout.unwrap_or(0.0);
        if !(0.0..1.0).contains(&rate) {
            return Err(HarnessError::Config("dropout must lie in [0, 1)".into()));
        }
        let (mut policy, mut critic) = match id {
            ModelId::Custom => {
                if self.hidden.is_empty() {
                    return Err(HarnessError::Config("custom model needs hidden widths".into()));
                }
                (
                    NetworkSpec::mlp(p_in, &self.hidden, self.activation, rate, 2 * action_dim)?,
                    NetworkSpec::mlp(c_in, &self.hidden, self.activation, rate, 1)?,
                )
            }
            _ => (
                NetworkSpec::model(id, p_in, 2 * action_dim)?,
                NetworkSpec::model(id, c_in, 1)?,
            ),
        };
        if let Some(rate) = self.dropout {
            policy.dropout_rate = rate;
            critic.dropout_rate = rate;
        }
        if !self.critic_dropout {
            critic.dropout_rate = 0.0;
        }
        Ok((policy, critic))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub eval_period: usize,
    /// Initial episodes driven by uniform random actions.
    pub random_episodes: usize,
    /// Training-log row period in environment steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            eval_period: 5_000,
            random_episodes: 100,
            log_every: 500,
        }
    }
}

/// One evaluation scenario: a map and a fixed task suite, either read from
/// `suite` or generated from `suite_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub map: PathBuf,
    #[serde(default)]
    pub suite: Option<PathBuf>,
    #[serde(default = "default_tasks")]
    pub n_tasks: usize,
    #[serde(default)]
    pub suite_seed: u64,
}

fn default_tasks() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub train_map: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub env: NavConfig,
    #[serde(default)]
    pub ip: IpConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sac: SacConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub scenarios: Vec<ScenarioConfig>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

/// A scenario with its map and tasks loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub grid: std::sync::Arc<OccupancyGrid>,
    pub suite: TaskSuite,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads a config and resolves its paths against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train_map);
        if let Some(o) = &mut self.out_dir {
            fix(o);
        }
        for s in &mut self.scenarios {
            fix(&mut s.map);
            if let Some(p) = &mut s.suite {
                fix(p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks files and cross-section consistency before any training.
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.sac.validate()?;
        self.ip.family()?;
        let id = self.model.model_id()?;
        if id == ModelId::Model2 && self.env.stack != 3 {
            return Err(HarnessError::Config(
                "Model_2 consumes stacked scans; set env.stack = 3".into(),
            ));
        }
        self.model.specs(&self.env, 2)?;
        if self.train.eval_period == 0 || self.train.log_every == 0 {
            return Err(HarnessError::Config(
                "eval_period and log_every must be positive".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("no seeds".into()));
        }
        let mut files = vec![&self.train_map];
        for s in &self.scenarios {
            files.push(&s.map);
            if let Some(p) = &s.suite {
                files.push(p);
            }
        }
        for f in files {
            if !f.is_file() {
                return Err(HarnessError::Config(format!("missing file {}", f.display())));
            }
        }
        let mut names: Vec<&str> = self.scenarios.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.scenarios.len() {
            return Err(HarnessError::Config("duplicate scenario names".into()));
        }
        Ok(())
    }

    pub fn action_bounds(&self) -> ActionBounds {
        let (lo, hi) = self.env.action_box();
        ActionBounds::new(lo, hi)
    }

    /// Initial IP parameters and per-beam bounds.
    pub fn ip_setup(&self) -> Result<IpSetup> {
        let (y_min, y_max) = self.env.scan_bounds();
        let params = IpParams::initial(self.ip.family()?, self.ip.sharing, &y_min);
        Ok(IpSetup { params, y_min, y_max })
    }

    pub fn load_train_map(&self) -> Result<OccupancyGrid> {
        OccupancyGrid::load(&self.train_map)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", self.train_map.display())))
    }

    /// Loads every scenario map and suite. Generated suites depend only on
    /// `suite_seed`, so all runs of an experiment see the same tasks.
    pub fn load_scenarios(&self) -> Result<Vec<Scenario>> {
        self.scenarios
            .iter()
            .map(|s| {
                let grid = OccupancyGrid::load(&s.map)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", s.map.display())))?;
                let suite = match &s.suite {
                    Some(p) => TaskSuite::load(p, self.env.success_radius)?,
                    None => {
                        let mut rng = substream(s.suite_seed, "suite");
                        TaskSuite::generate(&grid, &self.env, &s.map.display().to_string(), s.n_tasks, &mut rng)?
                    }
                };
                Ok(Scenario {
                    name: s.name.clone(),
                    grid: std::sync::Arc::new(grid),
                    suite,
                })
            })
            .collect()
    }
}
