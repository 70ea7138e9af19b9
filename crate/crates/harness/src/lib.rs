//! Experiment harness: configuration, training and evaluation runs,
//! learning curves, checkpoints, run summaries and analysis reports.

use std::path::{Path, PathBuf};

use ipnav_core::lidar_prep::PrepError;
use ipnav_core::nav_env::EnvError;
use ipnav_core::sac::SacError;
use ipnav_core::tinygrad::GradError;

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod run;
pub mod toy;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use metrics::{score, EvalRecord, LearningCurve, RunSummary, ScenarioStats};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("no evaluation records in {0}")]
    NoRecords(String),
    #[error("inconsistent scenarios: {0}")]
    InconsistentScenarios(String),
    #[error("checkpoint does not match the suite: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Prep(#[from] PrepError),
}

impl HarnessError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Writes a file, creating parent directories.
pub fn write_file(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

pub fn read_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}
