//! Scores, evaluation records, learning-curve CSV files and run summaries.
//!
//! Learning-curve CSV: one row per evaluation,
//! `step,<scenario>_success,<scenario>_score,<scenario>_length` repeated per
//! scenario in config order. Floats use the shortest representation that
//! round-trips, so identical runs produce identical files.

use std::fmt::Write as _;
use std::path::Path;

use ipnav_core::nav_env::{EpisodeResult, Outcome};
use serde::{Deserialize, Serialize};

use crate::{read_file, HarnessError, Result};

/// Navigation score: `1 - 2 T_s / T_max` on success, `-1` otherwise.
pub fn score(outcome: Outcome, steps: usize, t_max: usize) -> f64 {
    match outcome {
        Outcome::Success => 1.0 - 2.0 * steps as f64 / t_max as f64,
        Outcome::Crash | Outcome::Timeout => -1.0,
    }
}

/// Aggregate of one scenario's task suite at one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStats {
    pub name: String,
    pub success_rate: f64,
    pub mean_score: f64,
    /// Mean episode length in steps over all tasks.
    pub mean_length: f64,
}

impl ScenarioStats {
    pub fn from_episodes(name: &str, episodes: &[EpisodeResult], t_max: usize) -> Self {
        let n = episodes.len().max(1) as f64;
        let successes = episodes.iter().filter(|e| e.outcome == Outcome::Success).count();
        Self {
            name: name.to_string(),
            success_rate: successes as f64 / n,
            mean_score: episodes.iter().map(|e| score(e.outcome, e.steps, t_max)).sum::<f64>() / n,
            mean_length: episodes.iter().map(|e| e.steps as f64).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Training steps taken before the evaluation.
    pub step: usize,
    pub scenarios: Vec<ScenarioStats>,
}

impl EvalRecord {
    pub fn scenario(&self, name: &str) -> Option<&ScenarioStats> {
        self.scenarios.iter().find(|s| s.name == name)
    }
}

/// The evaluation records of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearningCurve {
    pub names: Vec<String>,
    pub records: Vec<EvalRecord>,
}

const SUFFIXES: [&str; 3] = ["_success", "_score", "_length"];

impl LearningCurve {
    pub fn new(names: Vec<String>) -> Self {
        Self {
            names,
            records: Vec::new(),
        }
    }

    /// Appends a record whose scenarios must match `names` in order.
    pub fn push(&mut self, record: EvalRecord) -> Result<()> {
        let found: Vec<&str> = record.scenarios.iter().map(|s| s.name.as_str()).collect();
        if found != self.names.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(HarnessError::InconsistentScenarios(format!(
                "record at step {} has {found:?}, curve has {:?}",
                record.step, self.names
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn header(&self) -> String {
        let mut h = String::from("step");
        for n in &self.names {
            for s in SUFFIXES {
                let _ = write!(h, ",{n}{s}");
            }
        }
        h
    }

    pub fn row(record: &EvalRecord) -> String {
        let mut r = record.step.to_string();
        for s in &record.scenarios {
            let _ = write!(r, ",{},{},{}", s.success_rate, s.mean_score, s.mean_length);
        }
        r
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for rec in &self.records {
            out.push_str(&Self::row(rec));
            out.push('\n');
        }
        out
    }

    /// Parses a learning-curve CSV; `source` names it in errors.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let err = |msg: String| HarnessError::Parse {
            path: source.to_string(),
            msg,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| HarnessError::NoRecords(source.to_string()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"step") || !(cols.len() - 1).is_multiple_of(3) {
            return Err(err(format!("unexpected header '{header}'")));
        }
        let mut names = Vec::new();
        for chunk in cols[1..].chunks(3) {
            let name = chunk[0]
                .strip_suffix(SUFFIXES[0])
                .ok_or_else(|| err(format!("column '{}' is not a success column", chunk[0])))?;
            for (c, s) in chunk.iter().zip(SUFFIXES) {
                if *c != format!("{name}{s}") {
                    return Err(err(format!("expected column '{name}{s}', found '{c}'")));
                }
            }
            names.push(name.to_string());
        }
        let mut curve = Self::new(names);
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(err(format!(
                    "row {} has {} fields, header has {}",
                    i + 1,
                    fields.len(),
                    cols.len()
                )));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("row {}: '{s}': {e}", i + 1)));
            let step = fields[0]
                .parse::<usize>()
                .map_err(|e| err(format!("row {}: step: {e}", i + 1)))?;
            let mut scenarios = Vec::new();
            for (k, name) in curve.names.iter().enumerate() {
                let f = &fields[1 + 3 * k..4 + 3 * k];
                scenarios.push(ScenarioStats {
                    name: name.clone(),
                    success_rate: num(f[0])?,
                    mean_score: num(f[1])?,
                    mean_length: num(f[2])?,
                });
            }
            curve.records.push(EvalRecord { step, scenarios });
        }
        Ok(curve)
    }

    /// Reads `learning_curve.csv` from a run directory, or the file itself.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() {
            path.join("learning_curve.csv")
        } else {
            path.to_path_buf()
        };
        Self::parse(&read_file(&file)?, &file.display().to_string())
    }

    fn column(&self, name: &str, f: impl Fn(&ScenarioStats) -> f64) -> Result<Vec<f64>> {
        if !self.names.iter().any(|n| n == name) {
            return Err(HarnessError::InconsistentScenarios(format!("no scenario '{name}'")));
        }
        Ok(self
            .records
            .iter()
            .map(|r| f(r.scenario(name).expect("records match names")))
            .collect())
    }

    /// Maximum success rate over the records.
    pub fn msr(&self, name: &str) -> Result<f64> {
        self.max_of(name, |s| s.success_rate)
    }

    /// Maximum mean score over the records.
    pub fn mans(&self, name: &str) -> Result<f64> {
        self.max_of(name, |s| s.mean_score)
    }

    fn max_of(&self, name: &str, f: impl Fn(&ScenarioStats) -> f64) -> Result<f64> {
        let col = self.column(name, f)?;
        if col.is_empty() {
            return Err(HarnessError::NoRecords(name.to_string()));
        }
        Ok(col.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn final_success(&self, name: &str) -> Result<f64> {
        self.column(name, |s| s.success_rate)?
            .last()
            .copied()
            .ok_or_else(|| HarnessError::NoRecords(name.to_string()))
    }

    /// Trapezoidal area under the success-rate curve divided by the step
    /// span, i.e. the time-averaged success rate in `[0, 1]`.
    pub fn success_auc(&self, name: &str) -> Result<f64> {
        let col = self.column(name, |s| s.success_rate)?;
        let steps: Vec<f64> = self.records.iter().map(|r| r.step as f64).collect();
        match col.len() {
            0 => Err(HarnessError::NoRecords(name.to_string())),
            1 => Ok(col[0]),
            _ => {
                let span = steps[steps.len() - 1] - steps[0];
                if span <= 0.0 {
                    return Ok(col.iter().sum::<f64>() / col.len() as f64);
                }
                let area: f64 = (1..col.len())
                    .map(|i| 0.5 * (col[i] + col[i - 1]) * (steps[i] - steps[i - 1]))
                    .sum();
                Ok(area / span)
            }
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub name: String,
    /// Per-run maxima, in run order.
    pub msr: Vec<f64>,
    pub mans: Vec<f64>,
    pub msr_mean: f64,
    pub msr_sd: f64,
    pub mans_mean: f64,
    pub mans_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: Vec<String>,
    pub scenarios: Vec<ScenarioSummary>,
}

/// MSR and MANS per scenario across runs. Every run must have at least
/// one record and the same scenario set.
pub fn summarize(runs: &[(String, LearningCurve)]) -> Result<RunSummary> {
    let (first_label, first) = runs
        .first()
        .ok_or_else(|| HarnessError::NoRecords("no runs given".into()))?;
    for (label, curve) in runs {
        if curve.records.is_empty() {
            return Err(HarnessError::NoRecords(label.clone()));
        }
        let mut a = curve.names.clone();
        let mut b = first.names.clone();
        a.sort();
        b.sort();
        if a != b {
            return Err(HarnessError::InconsistentScenarios(format!(
                "{label} has {:?}, {first_label} has {:?}",
                curve.names, first.names
            )));
        }
    }
    let mut scenarios = Vec::new();
    for name in &first.names {
        let msr = runs.iter().map(|(_, c)| c.msr(name)).collect::<Result<Vec<_>>>()?;
        let mans = runs.iter().map(|(_, c)| c.mans(name)).collect::<Result<Vec<_>>>()?;
        let (msr_mean, msr_sd) = mean_sd(&msr);
        let (mans_mean, mans_sd) = mean_sd(&mans);
        scenarios.push(ScenarioSummary {
            name: name.clone(),
            msr,
            mans,
            msr_mean,
            msr_sd,
            mans_mean,
            mans_sd,
        });
    }
    Ok(RunSummary {
        runs: runs.iter().map(|(l, _)| l.clone()).collect(),
        scenarios,
    })
}

impl RunSummary {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# runs: {}; sd is the population standard deviation over runs\n",
            self.runs.len()
        );
        out.push_str("scenario,msr_mean,msr_sd,mans_mean,mans_sd\n");
        for s in &self.scenarios {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.name, s.msr_mean, s.msr_sd, s.mans_mean, s.mans_sd
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.scenarios.iter().map(|s| s.name.len()).max().unwrap_or(0).max(8);
        let mut out = format!(
            "{:<width$}  {:>15}  {:>17}\n",
            "scenario", "MSR (mean/SD)", "MANS (mean/SD)"
        );
        for s in &self.scenarios {
            let msr = format!("{:.3}/{:.3}", s.msr_mean, s.msr_sd);
            let mans = format!("{:.3}/{:.3}", s.mans_mean, s.mans_sd);
            let _ = writeln!(out, "{:<width$}  {msr:>15}  {mans:>17}", s.name);
        }
        let _ = writeln!(
            out,
            "{} run(s); SD is the population standard deviation.",
            self.runs.len()
        );
        out
    }
}
