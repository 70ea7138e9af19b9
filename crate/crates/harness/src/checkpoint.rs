//! Agent checkpoints as JSON: a format tag, the training step and seed, the
//! resolved experiment config and the full agent state. The replay buffer
//! is not saved.

use std::path::Path;

use ipnav_core::sac::AgentState;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::{read_file, write_file, HarnessError, Result};

pub const FORMAT: &str = "ipnav-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub step: usize,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub agent: AgentState<f32>,
}

impl Checkpoint {
    pub fn new(step: usize, seed: u64, config: ExperimentConfig, agent: AgentState<f32>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            step,
            seed,
            config,
            agent,
        }
    }

    /// Writes through a temporary file so a crash never leaves a torn
    /// checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self).map_err(|e| HarnessError::Checkpoint {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let tmp = path.with_extension("json.tmp");
        write_file(&tmp, json)?;
        std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
    }

    /// Reads a checkpoint file, or `checkpoint.json` in a run directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() {
            path.join("checkpoint.json")
        } else {
            path.to_path_buf()
        };
        let bad = |msg: String| HarnessError::Checkpoint {
            path: file.clone(),
            msg,
        };
        let ck: Self = serde_json::from_str(&read_file(&file)?).map_err(|e| bad(e.to_string()))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(bad(format!("unsupported format {} v{}", ck.format, ck.version)));
        }
        Ok(ck)
    }
}
