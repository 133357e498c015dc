//! Run configuration: defaults, `key = value` config files and flag overrides.
//!
//! Precedence is flags, then config file, then defaults.

use std::path::{Path, PathBuf};

use clap::Args;

use super::CliError;
use crate::experiments::{Algorithm, ConvergenceConfig, SweepConfig};
use crate::learner::{ScheduleKind, DIVERGENCE_FACTOR};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Number of states d.
    #[arg(long)]
    pub states: Option<usize>,
    /// Number of tasks N.
    #[arg(long)]
    pub tasks: Option<usize>,
    /// Rank r of the reward (and value) matrix.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Truncation rank k used by tsvd (default: min(rank + 1, tasks)).
    #[arg(long = "trunc-k")]
    pub trunc_k: Option<usize>,
    /// Discount factor in [0, 1).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Iterations T.
    #[arg(long)]
    pub iters: Option<u64>,
    /// Independent trials averaged per curve.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Step-size schedule: `simple` (1/(t+1)) or `theory` (α0/(t+α0), α0 = 1/(1-γ)).
    #[arg(long, value_parser = parse_schedule)]
    pub schedule: Option<ScheduleKind>,
    /// Half-width β of the uniform reward noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Comma-separated algorithms: tsvd, td, feature-td.
    #[arg(long, value_parser = parse_algorithms)]
    pub algos: Option<std::vec::Vec<Algorithm>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn parse_schedule(s: &str) -> Result<ScheduleKind, String> {
    match s.trim() {
        "theory" => Ok(ScheduleKind::Theory),
        "simple" => Ok(ScheduleKind::Simple),
        other => Err(format!("unknown schedule `{other}` (expected theory or simple)")),
    }
}

pub fn parse_algorithms(s: &str) -> Result<Vec<Algorithm>, String> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let algo: Algorithm = part.parse()?;
        if !out.contains(&algo) {
            out.push(algo);
        }
    }
    if out.is_empty() {
        return Err("no algorithms given".into());
    }
    Ok(out)
}

pub fn parse_ranks(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad rank `{}`", p.trim())))
        .collect()
}

/// Every setting, each optional until resolved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialConfig {
    pub states: Option<usize>,
    pub tasks: Option<usize>,
    pub rank: Option<usize>,
    pub trunc_k: Option<usize>,
    pub gamma: Option<f64>,
    pub iters: Option<u64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub schedule: Option<ScheduleKind>,
    pub noise: Option<f64>,
    pub algos: Option<std::vec::Vec<Algorithm>>,
    pub out: Option<PathBuf>,
    pub ranks: Option<Vec<usize>>,
    pub divergence_factor: Option<f64>,
}

macro_rules! overlay {
    ($base:expr, $over:expr, $($field:ident),*) => {
        PartialConfig { $($field: $over.$field.or($base.$field),)* }
    };
}

impl PartialConfig {
    /// Fields set in `over` win.
    pub fn overlay(self, over: PartialConfig) -> PartialConfig {
        overlay!(
            self, over, states, tasks, rank, trunc_k, gamma, iters, trials, seed, schedule, noise,
            algos, out, ranks, divergence_factor
        )
    }

    pub fn from_args(args: &ConfigArgs) -> PartialConfig {
        PartialConfig {
            states: args.states,
            tasks: args.tasks,
            rank: args.rank,
            trunc_k: args.trunc_k,
            gamma: args.gamma,
            iters: args.iters,
            trials: args.trials,
            seed: args.seed,
            schedule: args.schedule,
            noise: args.noise,
            algos: args.algos.clone(),
            out: args.out.clone(),
            ranks: None,
            divergence_factor: None,
        }
    }

    /// Parses flat `key = value` lines; `#` starts a comment.
    pub fn parse_file_contents(text: &str) -> Result<PartialConfig, CliError> {
        let mut cfg = PartialConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CliError::Config(format!("config line {}: {msg}", idx + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
                value.parse().map_err(|_| format!("bad value `{value}` for `{key}`"))
            }
            match key.replace('-', "_").as_str() {
                "states" => cfg.states = Some(num(key, value).map_err(err)?),
                "tasks" => cfg.tasks = Some(num(key, value).map_err(err)?),
                "rank" => cfg.rank = Some(num(key, value).map_err(err)?),
                "trunc_k" => cfg.trunc_k = Some(num(key, value).map_err(err)?),
                "gamma" => cfg.gamma = Some(num(key, value).map_err(err)?),
                "iters" => cfg.iters = Some(num(key, value).map_err(err)?),
                "trials" => cfg.trials = Some(num(key, value).map_err(err)?),
                "seed" => cfg.seed = Some(num(key, value).map_err(err)?),
                "schedule" => cfg.schedule = Some(parse_schedule(value).map_err(err)?),
                "noise" => cfg.noise = Some(num(key, value).map_err(err)?),
                "algos" => cfg.algos = Some(parse_algorithms(value).map_err(err)?),
                "out" => cfg.out = Some(PathBuf::from(value)),
                "ranks" => cfg.ranks = Some(parse_ranks(value).map_err(err)?),
                "divergence_factor" => cfg.divergence_factor = Some(num(key, value).map_err(err)?),
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<PartialConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_file_contents(&text)
    }

    pub fn resolve(self) -> Config {
        let defaults = Config::default();
        let tasks = self.tasks.unwrap_or(defaults.tasks);
        let rank = self.rank.unwrap_or(defaults.rank);
        Config {
            states: self.states.unwrap_or(defaults.states),
            tasks,
            rank,
            trunc_k: self.trunc_k.unwrap_or_else(|| (rank + 1).min(tasks)),
            gamma: self.gamma.unwrap_or(defaults.gamma),
            iters: self.iters.unwrap_or(defaults.iters),
            trials: self.trials.unwrap_or(defaults.trials),
            seed: self.seed.unwrap_or(defaults.seed),
            schedule: self.schedule.unwrap_or(defaults.schedule),
            noise_halfwidth: self.noise.unwrap_or(defaults.noise_halfwidth),
            algorithms: self.algos.unwrap_or(defaults.algorithms),
            out: self.out.unwrap_or(defaults.out),
            ranks: self.ranks,
            divergence_factor: self.divergence_factor.unwrap_or(defaults.divergence_factor),
        }
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub states: usize,
    pub tasks: usize,
    pub rank: usize,
    pub trunc_k: usize,
    pub gamma: f64,
    pub iters: u64,
    pub trials: usize,
    pub seed: u64,
    pub schedule: ScheduleKind,
    pub noise_halfwidth: f64,
    pub algorithms: Vec<Algorithm>,
    pub out: PathBuf,
    /// Sweep ranks; `None` means every fourth rank from 2 plus N itself.
    pub ranks: Option<Vec<usize>>,
    pub divergence_factor: f64,
}

impl Default for Config {
    fn default() -> Self {
        let run = ConvergenceConfig::default();
        Config {
            states: run.states,
            tasks: run.tasks,
            rank: run.rank,
            trunc_k: run.trunc_k,
            gamma: run.gamma,
            iters: run.iters,
            trials: run.trials,
            seed: run.seed,
            schedule: run.schedule,
            noise_halfwidth: run.noise_halfwidth,
            algorithms: run.algorithms,
            out: PathBuf::from("out"),
            ranks: None,
            divergence_factor: DIVERGENCE_FACTOR,
        }
    }
}

impl Config {
    /// Resolves flags over an optional config file over defaults.
    pub fn load(args: &ConfigArgs, ranks: Option<Vec<usize>>) -> Result<Config, CliError> {
        Self::load_over(PartialConfig::default(), args, ranks)
    }

    /// As [`Config::load`], but unset sizes fall back to the sweep scale
    /// (d=150, N=30, T=10000, 10 trials) instead of the convergence scale.
    pub fn load_sweep(args: &ConfigArgs, ranks: Option<Vec<usize>>) -> Result<Config, CliError> {
        let sweep = SweepConfig::default();
        let base = PartialConfig {
            states: Some(sweep.states),
            tasks: Some(sweep.tasks),
            iters: Some(sweep.iters),
            trials: Some(sweep.trials),
            ..PartialConfig::default()
        };
        Self::load_over(base, args, ranks)
    }

    fn load_over(base: PartialConfig, args: &ConfigArgs, ranks: Option<Vec<usize>>) -> Result<Config, CliError> {
        let file = match &args.config {
            Some(path) => PartialConfig::from_file(path)?,
            None => PartialConfig::default(),
        };
        let flags = PartialConfig {
            ranks,
            ..PartialConfig::from_args(args)
        };
        Ok(base.overlay(file).overlay(flags).resolve())
    }

    pub fn convergence(&self) -> ConvergenceConfig {
        ConvergenceConfig {
            states: self.states,
            tasks: self.tasks,
            rank: self.rank,
            trunc_k: self.trunc_k,
            gamma: self.gamma,
            iters: self.iters,
            trials: self.trials,
            seed: self.seed,
            schedule: self.schedule,
            noise_halfwidth: self.noise_halfwidth,
            algorithms: self.algorithms.clone(),
            divergence_factor: self.divergence_factor,
        }
    }

    pub fn sweep_ranks(&self) -> Vec<usize> {
        match &self.ranks {
            Some(r) => r.clone(),
            None => {
                let mut r: Vec<usize> = (2..self.tasks).step_by(4).collect();
                r.push(self.tasks);
                r
            }
        }
    }

    pub fn sweep(&self) -> SweepConfig {
        SweepConfig {
            states: self.states,
            tasks: self.tasks,
            gamma: self.gamma,
            iters: self.iters,
            trials: self.trials,
            seed: self.seed,
            schedule: self.schedule,
            noise_halfwidth: self.noise_halfwidth,
            ranks: self.sweep_ranks(),
            divergence_factor: self.divergence_factor,
        }
    }
}
