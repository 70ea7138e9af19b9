//! Soft actor-critic with twin critics, target critics, a squashed Gaussian
//! policy and IP parameters trained through both losses.

mod agent;
mod buffer;
pub mod squash;

use serde::{Deserialize, Serialize};

use crate::lidar_prep::IpParams;
use crate::tinygrad::GradError;

pub use agent::{AgentState, IpSetup, PolicySnapshot, SacAgent, UpdateStats};
pub use buffer::{Batch, ReplayBuffer, Transition};
pub use squash::ActionBounds;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SacError {
    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,
    #[error("observation has {found} values, expected {expected}")]
    ObservationSize { expected: usize, found: usize },
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grad(#[from] GradError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    /// Fixed entropy coefficient.
    pub alpha: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub lr: f64,
    pub tau: f64,
    /// Global-norm gradient clip per update; `None` disables it.
    pub grad_clip: Option<f64>,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// One IP parameter set for policy and both critics; otherwise each
    /// network gets its own copy.
    pub shared_zeta: bool,
    /// Learning rate for the IP parameters; `None` uses `lr`.
    pub zeta_lr: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.01,
            batch_size: 100,
            buffer_capacity: 100_000,
            lr: 1e-4,
            tau: 0.005,
            grad_clip: Some(10.0),
            log_std_min: -5.0,
            log_std_max: 2.0,
            shared_zeta: true,
            zeta_lr: None,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), SacError> {
        let bad = |m: &str| Err(SacError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.alpha < 0.0 || self.lr <= 0.0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("alpha, lr, batch size and buffer capacity must be positive");
        }
        if self.log_std_min >= self.log_std_max {
            return bad("log_std_min must be below log_std_max");
        }
        Ok(())
    }
}

/// What the episode loop needs from a controller.
pub trait Agent {
    /// Action for a flat observation row; `deterministic` drops exploration
    /// noise.
    fn act(&mut self, obs: &[f64], deterministic: bool) -> Result<Vec<f64>, SacError>;

    /// Records a transition. Agents that do not learn ignore it.
    fn observe(&mut self, _t: Transition) {}

    /// Runs one update block if enough data has been collected.
    fn update(&mut self) -> Result<Option<UpdateStats>, SacError> {
        Ok(None)
    }

    /// Current IP parameters used by the policy, if any.
    fn ip_params(&self) -> Option<IpParams> {
        None
    }
}
