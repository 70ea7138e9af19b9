use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ipnav::analysis::{config_gradchecks, pos_improves, pos_report, DEFAULT_THRESHOLD_OFFSET};
use ipnav::metrics::summarize;
use ipnav::run::{evaluate_checkpoint, scenario_from_suite, train, TrainOptions};
use ipnav::{write_file, Checkpoint, ExperimentConfig, HarnessError, LearningCurve, Result};
use ipnav_core::tinygrad::GradcheckConfig;

#[derive(Parser)]
#[command(name = "ipnav", version, about = "Train and evaluate lidar navigation agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed; each seed writes `<out>/seed_<n>`.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only this seed instead of the config's list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on a suite file or on the scenarios of its config.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Map for the suite when it has no `map` line.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// MSR and MANS across run directories.
    Summarize {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the summary CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-beam PoS of the configured (or checkpointed) IP mapping.
    PosReport {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Threshold distance above `Y_min`, in meters.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD_OFFSET)]
        offset: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of the configured agent's losses.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            quiet,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            let out = out
                .or_else(|| cfg.out_dir.clone())
                .ok_or_else(|| HarnessError::Config("no output directory: pass --out or set out_dir".into()))?;
            let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| cfg.seeds.clone());
            for s in seeds {
                let dir = seed_dir(&out, s);
                let curve = train(&cfg, s, &dir, TrainOptions { progress: !quiet })?;
                println!("{}: {} evaluation(s) written", dir.display(), curve.records.len());
            }
            Ok(true)
        }
        Command::Eval {
            checkpoint,
            suite,
            map,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let scenarios = match suite {
                Some(s) => vec![scenario_from_suite(&s, map.as_deref(), ck.config.env.success_radius)?],
                None => ck.config.load_scenarios()?,
            };
            let report = evaluate_checkpoint(&ck, scenarios)?;
            report.write(&out)?;
            for s in &report.record.scenarios {
                let ratio = report
                    .mean_path_ratio(&s.name)
                    .map_or("n/a".to_string(), |r| format!("{r:.3}"));
                println!(
                    "{}: success {:.3}, mean score {:.3}, mean length {:.1}, path ratio {ratio}",
                    s.name, s.success_rate, s.mean_score, s.mean_length
                );
            }
            Ok(true)
        }
        Command::Summarize { runs, out } => {
            let curves = runs
                .iter()
                .map(|r| Ok((r.display().to_string(), LearningCurve::load(r)?)))
                .collect::<Result<Vec<_>>>()?;
            let summary = summarize(&curves)?;
            print!("{}", summary.to_table());
            if let Some(out) = out {
                write_file(out, summary.to_csv())?;
            }
            Ok(true)
        }
        Command::PosReport {
            config,
            checkpoint,
            offset,
            out,
        } => {
            let ck = checkpoint.as_ref().map(Checkpoint::load).transpose()?;
            let cfg = match (config, &ck) {
                (Some(c), _) => ExperimentConfig::load(c)?,
                (None, Some(ck)) => ck.config.clone(),
                (None, None) => return Err(HarnessError::Config("pass --config or --checkpoint".into())),
            };
            let report = pos_report(&cfg, ck.as_ref(), offset)?;
            let csv = report.to_csv();
            match out {
                Some(p) => write_file(p, &csv)?,
                None => print!("{csv}"),
            }
            let conditions = report.beams.iter().all(|b| b.conditions_hold);
            eprintln!(
                "{}: mapped PoS above linear on all beams: {}; conditions hold: {conditions}",
                report.family.name(),
                pos_improves(&report)
            );
            Ok(true)
        }
        Command::Gradcheck { config, seed, tol } => {
            let cfg = ExperimentConfig::load(&config)?;
            let gc = GradcheckConfig {
                seed,
                ..GradcheckConfig::default()
            };
            let mut ok = true;
            for (name, r) in config_gradchecks(&cfg, seed, &gc)? {
                let pass = r.passes(tol);
                ok &= pass;
                println!(
                    "{} {name}: max rel err {:.3e} ({}), {} checked, {} skipped",
                    if pass { "PASS" } else { "FAIL" },
                    r.max_rel_err,
                    r.worst,
                    r.n_checked,
                    r.n_skipped
                );
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
