//! Command-line experiment runner.
//!
//! Every subcommand reads an optional TOML file (`--config`), applies the
//! command-line flags on top and writes CSV/JSON files into the output
//! directory. Exit status: 0 on success, 1 when an experiment fails or one of
//! its checks does not hold, 2 on a configuration error.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use comhe::harness::Regularizer;
use comhe::minimizer::Objective;
use comhe::theorylab::Sampling;

use commands::{Outcome, RunError};
use config::{Check, ConfigError, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "comhe", version, about = "Hyperspherical energy experiments")]
pub struct Cli {
    /// TOML experiment file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (1 keeps every run single-threaded).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the energy of random points on a sphere.
    Minimize(MinimizeArgs),
    /// Train the network under several regularizers.
    Train(TrainArgs),
    /// Monte-Carlo checks of the angle-preservation bounds.
    ValidateTheory(TheoryArgs),
    /// Low-rank reconstruction from bilateral projections.
    BilateralDemo(BilateralArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Minimize(_) => "minimize",
            Command::Train(_) => "train",
            Command::ValidateTheory(_) => "validate-theory",
            Command::BilateralDemo(_) => "bilateral-demo",
        }
    }
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown value '{s}'"))
}

#[derive(Debug, Args)]
pub struct MinimizeArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub normalized: bool,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// plain, half_space, rp, ap_alternating, ap_unrolled, adversarial, group.
    #[arg(long, value_parser = parse_enum::<Objective>)]
    pub objective: Option<Objective>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub projected_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Comma-separated regularizers, e.g. `none,hs_mhe,rp`.
    #[arg(long, value_delimiter = ',', value_parser = parse_enum::<Regularizer>)]
    pub arms: Option<Vec<Regularizer>>,
    #[arg(long)]
    pub rotation: bool,
    /// Number of seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub reg_weight: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub log_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long, value_enum)]
    pub which: Option<Check>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Angle between the test pair, in degrees.
    #[arg(long)]
    pub angle: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// dense or reduced.
    #[arg(long, value_parser = parse_enum::<Sampling>)]
    pub sampling: Option<Sampling>,
}

#[derive(Debug, Args)]
pub struct BilateralArgs {
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Loads the file (if any) and applies the flags. Returns the train-params
/// overrides separately since they merge with a preset.
pub fn resolve(cli: &Cli) -> Result<(ExperimentConfig, toml::Table), ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(cmd) = &cfg.command {
        if cmd != cli.command.name() {
            return Err(ConfigError::new(format!(
                "config is for '{cmd}' but '{}' was requested",
                cli.command.name()
            )));
        }
    }
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.out, cli.out.clone());
    set(&mut cfg.threads, cli.threads);
    if cfg.threads == 0 {
        return Err(ConfigError::new("threads must be positive"));
    }
    let mut overrides = toml::Table::new();
    match &cli.command {
        Command::Minimize(a) => {
            let m = &mut cfg.minimize;
            set(&mut m.n, a.n);
            set(&mut m.dim, a.dim);
            set(&mut m.s, a.s);
            m.normalized |= a.normalized;
            set(&mut m.restarts, a.restarts);
            set(&mut m.optimizer.objective, a.objective);
            set(&mut m.optimizer.lr, a.lr);
            set(&mut m.optimizer.max_iters, a.max_iters);
            set(&mut m.optimizer.tol, a.tol);
            set(&mut m.optimizer.projected_dim, a.projected_dim);
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            set(&mut t.arms, a.arms.clone());
            t.rotation |= a.rotation;
            set(&mut t.seeds, a.seeds);
            if let Some(v) = a.epochs {
                overrides.insert("epochs".into(), toml::Value::Integer(v as i64));
            }
            if let Some(v) = a.log_every {
                overrides.insert("log_every".into(), toml::Value::Integer(v as i64));
            }
            if let Some(v) = a.reg_weight {
                overrides.insert("reg_weight".into(), toml::Value::Float(v));
            }
            if let Some(v) = a.lr {
                overrides.insert("lr".into(), toml::Value::Float(v));
            }
        }
        Command::ValidateTheory(a) => {
            let t = &mut cfg.theory;
            set(&mut t.which, a.which);
            set(&mut t.d, a.d);
            set(&mut t.k, a.k);
            set(&mut t.eps, a.eps);
            set(&mut t.angle, a.angle);
            set(&mut t.trials, a.trials);
            set(&mut t.sampling, a.sampling);
        }
        Command::BilateralDemo(a) => {
            let b = &mut cfg.bilateral;
            set(&mut b.m, a.m);
            set(&mut b.n, a.n);
            set(&mut b.rank, a.rank);
        }
    }
    Ok((cfg, overrides))
}

fn execute(cli: &Cli) -> Result<Outcome, RunError> {
    let (cfg, overrides) = resolve(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| RunError::Experiment(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Minimize(_) => commands::minimize_cmd(&cfg, &cfg.minimize),
        Command::Train(_) => commands::train_cmd(&cfg, &overrides),
        Command::ValidateTheory(_) => commands::theory_cmd(&cfg, &cfg.theory),
        Command::BilateralDemo(_) => commands::bilateral_cmd(&cfg, &cfg.bilateral),
    })
}

/// Parses `args` (program name first), runs the experiment and returns the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(Outcome::Passed) => EXIT_OK,
        Ok(Outcome::Failed(msg)) => {
            eprintln!("validation failed: {msg}");
            EXIT_FAILED
        }
        Err(RunError::Config(e)) => {
            eprintln!("{e}");
            EXIT_CONFIG
        }
        Err(RunError::Experiment(msg)) => {
            eprintln!("experiment failed: {msg}");
            EXIT_FAILED
        }
    }
}
