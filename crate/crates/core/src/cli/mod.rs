//! Command-line front end: `generate`, `run`, `sweep` and `verify`.
//!
//! Exit codes: 0 success, 1 validation or I/O error, 2 divergence abort,
//! 3 bound verification failure.

pub mod config;
pub mod plot;

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::env;
use crate::experiments::{self, AlgorithmRun, ExperimentError, RankSweepRecord};
use crate::learner::ScheduleKind;

pub use config::{Config, ConfigArgs, PartialConfig};
use plot::Series;

pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const SWEEP_CSV: &str = "rank_sweep.csv";
pub const SNAPSHOT_FILE: &str = "mdp.txt";
pub const REPORT_FILE: &str = "bounds.txt";

#[derive(Debug, Parser)]
#[command(name = "lowrank-td", version, about = "Truncated-SVD TD learning for multi-task policy evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an MDP, write its snapshot and print a summary.
    Generate(ConfigArgs),
    /// Trial-averaged convergence curves (CSV + SVG).
    Run(ConfigArgs),
    /// Final-iterate gap between tsvd and td across ranks (CSV + SVG).
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated ranks (default: 2, 6, 10, ... below N, and N).
        #[arg(long, value_parser = config::parse_ranks)]
        ranks: Option<std::vec::Vec<usize>>,
    },
    /// Check the misalignment and error envelopes under the theory schedule.
    Verify(ConfigArgs),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Aborted(String),
    #[error("bound verification failed")]
    VerificationFailed,
    #[error("{0}")]
    Experiment(ExperimentError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Aborted(_) => 2,
            CliError::VerificationFailed => 3,
            CliError::Experiment(ExperimentError::Aborted { .. }) => 2,
            CliError::Experiment(_) => 1,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(msg) => CliError::Config(msg),
            ExperimentError::Env(e) => CliError::Config(e.to_string()),
            other => CliError::Experiment(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Writes `contents` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output");
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Io(format!("cannot rename to {}: {e}", path.display())))?;
    Ok(())
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// `iteration,algorithm,mse,misalignment,noise_norm_sq,alpha`, grouped by
/// algorithm in the requested order.
pub fn convergence_csv(runs: &[AlgorithmRun]) -> String {
    let mut out = String::from("iteration,algorithm,mse,misalignment,noise_norm_sq,alpha\n");
    for run in runs {
        for r in &run.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iteration,
                run.algorithm,
                num(r.mse),
                num(r.misalignment),
                num(r.noise_norm_sq),
                num(r.step)
            );
        }
    }
    out
}

pub fn sweep_csv(records: &[RankSweepRecord]) -> String {
    let mut out = String::from("rank,gap_mse\n");
    for r in records {
        let _ = writeln!(out, "{},{}", r.rank, num(r.gap_mse));
    }
    out
}

fn convergence_plots(runs: &[AlgorithmRun]) -> (String, String) {
    let series = |metric: fn(&experiments::RunRecord) -> f64| -> Vec<Series> {
        runs.iter()
            .map(|run| Series {
                label: run.algorithm.to_string(),
                points: run.records.iter().map(|r| (r.iteration as f64, metric(r))).collect(),
            })
            .collect()
    };
    let mse = plot::line_chart(
        "Mean squared error to V*",
        "iteration",
        "||V* - V_t||_F^2 / dN",
        &series(|r| r.mse),
        true,
    );
    let mis = plot::line_chart(
        "Mass outside the true row space",
        "iteration",
        "||V_t H_perp H_perpᵀ||_F^2 / dN",
        &series(|r| r.misalignment),
        true,
    );
    (mse, mis)
}

fn out_path(config: &Config, file: &str) -> PathBuf {
    config.out.join(file)
}

fn validate(config: &Config) -> Result<(), CliError> {
    config.convergence().validate()?;
    Ok(())
}

pub fn cmd_generate(config: &Config, stdout: &mut dyn Write) -> Result<(), CliError> {
    validate(config)?;
    let mdp = env::generate_mdp(config.states, config.tasks, config.rank, config.gamma, config.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let gt = env::exact_value(&mdp).map_err(|e| CliError::Config(e.to_string()))?;
    let residual = env::row_space_residual(&mdp, &gt).map_err(|e| CliError::Config(e.to_string()))?;
    let mut buf = Vec::new();
    env::write_snapshot(&mdp, &mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    let path = out_path(config, SNAPSHOT_FILE);
    write_atomic(&path, &buf)?;
    writeln!(
        stdout,
        "d={} N={} r={} sigma_max={} lemma1_residual={:.6e} snapshot={}",
        mdp.states(),
        mdp.tasks(),
        mdp.rank(),
        num(gt.top_singular_value),
        residual,
        path.display()
    )?;
    Ok(())
}

pub fn cmd_run(config: &Config, stdout: &mut dyn Write) -> Result<(), CliError> {
    let csv_path = out_path(config, CONVERGENCE_CSV);
    match experiments::run_convergence(&config.convergence()) {
        Ok(runs) => {
            write_atomic(&csv_path, convergence_csv(&runs).as_bytes())?;
            let (mse, mis) = convergence_plots(&runs);
            write_atomic(&out_path(config, "mse.svg"), mse.as_bytes())?;
            write_atomic(&out_path(config, "misalignment.svg"), mis.as_bytes())?;
            for run in &runs {
                if let Some(last) = run.records.last() {
                    writeln!(
                        stdout,
                        "{}: final mse={} misalignment={}",
                        run.algorithm,
                        num(last.mse),
                        num(last.misalignment)
                    )?;
                }
            }
            writeln!(stdout, "wrote {}", csv_path.display())?;
            Ok(())
        }
        Err(ExperimentError::Aborted { abort, partial }) => {
            let mut csv = convergence_csv(&partial);
            let _ = writeln!(
                csv,
                "# aborted: algorithm={} trial={} iteration={} cause={}",
                abort.algorithm, abort.trial, abort.iteration, abort.cause
            );
            write_atomic(&csv_path, csv.as_bytes())?;
            Err(CliError::Aborted(abort.to_string()))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_sweep(config: &Config, stdout: &mut dyn Write) -> Result<(), CliError> {
    let records = experiments::run_rank_sweep(&config.sweep())?;
    let csv_path = out_path(config, SWEEP_CSV);
    write_atomic(&csv_path, sweep_csv(&records).as_bytes())?;
    let svg = plot::line_chart(
        "TSVD vs TD gap across ranks",
        "rank r",
        "||V_T - V^_T||_F^2 / dN",
        &[Series {
            label: "gap".into(),
            points: records.iter().map(|r| (r.rank as f64, r.gap_mse)).collect(),
        }],
        false,
    );
    write_atomic(&out_path(config, "rank_sweep.svg"), svg.as_bytes())?;
    for r in &records {
        writeln!(stdout, "rank={} gap_mse={}", r.rank, num(r.gap_mse))?;
    }
    writeln!(stdout, "wrote {}", csv_path.display())?;
    Ok(())
}

pub fn cmd_verify(config: &Config, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut run = config.convergence();
    if run.schedule != ScheduleKind::Theory {
        eprintln!(
            "warning: verify uses the theory schedule with alpha0 = 1/(1-gamma) = {}",
            1.0 / (1.0 - config.gamma)
        );
        run.schedule = ScheduleKind::Theory;
    }
    if run.trials < experiments::MIN_BOUND_TRIALS {
        eprintln!(
            "warning: verify raises trials from {} to {}",
            run.trials,
            experiments::MIN_BOUND_TRIALS
        );
    }
    let report = experiments::verify_bounds(&run)?;
    let text = report.to_key_values();
    write_atomic(&out_path(config, REPORT_FILE), text.as_bytes())?;
    stdout.write_all(text.as_bytes())?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::VerificationFailed)
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(args) => cmd_generate(&Config::load(args, None)?, stdout),
        Command::Run(args) => cmd_run(&Config::load(args, None)?, stdout),
        Command::Sweep { config, ranks } => cmd_sweep(&Config::load_sweep(config, ranks.clone())?, stdout),
        Command::Verify(args) => cmd_verify(&Config::load(args, None)?, stdout),
    }
}
