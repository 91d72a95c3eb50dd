//! Command-line driver for view-specific embedding training.
//!
//! `crossview <generate|train|eval|gradcheck|sweep> --config <path>` with
//! flags that override the file. See [`config`] for the file grammar.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use crossview_core::{Error, Result};

use crate::commands::{dataset_summary, print_reports};
use crate::config::{RawConfig, RunConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_IO: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "crossview", version, about = "Cross-view embedding training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset CSV.
    Generate(CommonArgs),
    /// Train view networks, write checkpoints and logs, evaluate on the test split.
    Train(CommonArgs),
    /// Evaluate checkpoints from the output directory.
    Eval(CommonArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(CommonArgs),
    /// Train once per lambda value and tabulate the results.
    Sweep(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_outer_iters: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Override any config key, e.g. `--set train.learning_rate=0.01`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl CommonArgs {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut raw = match &self.config {
            Some(path) => RawConfig::load(path)?,
            None => RawConfig::default(),
        };
        for o in &self.overrides {
            raw.apply_override(o)?;
        }
        if let Some(v) = self.seed {
            raw.set("seed", v.to_string());
        }
        if let Some(v) = &self.out {
            raw.set("out", v.display().to_string());
        }
        if let Some(v) = self.max_outer_iters {
            raw.set("train.max_outer_iters", v.to_string());
        }
        if let Some(v) = self.lambda1 {
            raw.set("train.lambda1", v.to_string());
        }
        if let Some(v) = self.lambda2 {
            raw.set("train.lambda2", v.to_string());
        }
        RunConfig::from_raw(&raw)
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Sizing(_) | Error::Validation(_) | Error::Parse { .. } => EXIT_VALIDATION,
        Error::Numeric(_) | Error::Diverged { .. } => EXIT_NUMERIC,
        Error::Io { .. } => EXIT_IO,
    }
}

/// Runs one command, printing a summary to stdout. Returns the exit code.
pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Generate(a) => {
            let cfg = a.run_config()?;
            let (ds, path) = commands::cmd_generate(&cfg)?;
            println!("{}", dataset_summary(&ds));
            println!("wrote {}", path.display());
        }
        Command::Train(a) => {
            let cfg = a.run_config()?;
            let out = commands::cmd_train(&cfg)?;
            if let Some(last) = out.log.rows.last() {
                println!(
                    "{} epochs; final joint loss {:.4}, train cross-view distance {:.4e}",
                    last.epoch, last.report.joint, last.crossview_train
                );
            }
            for p in &out.checkpoints {
                println!("wrote {}", p.display());
            }
            print_reports(&out.reports);
        }
        Command::Eval(a) => {
            let cfg = a.run_config()?;
            print_reports(&commands::cmd_eval(&cfg)?);
        }
        Command::Gradcheck(a) => {
            let cfg = a.run_config()?;
            let report = commands::cmd_gradcheck(&cfg)?;
            for r in &report.rows {
                println!(
                    "{:<24} {:>5} instances {:>7} coords  max rel err {:.3e}  {}",
                    r.group,
                    r.instances,
                    r.coordinates,
                    r.max_rel_err,
                    if r.passed { "ok" } else { "FAIL" }
                );
            }
            if !report.passed() {
                let worst = report
                    .rows
                    .iter()
                    .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
                    .expect("at least one group");
                eprintln!("gradient check failed; worst: {} ({:.3e})", worst.group, worst.max_rel_err);
                return Ok(EXIT_CHECK_FAILED);
            }
        }
        Command::Sweep(a) => {
            let cfg = a.run_config()?;
            let rows = commands::cmd_sweep(&cfg)?;
            println!("{:>10} {:>8} {:>8} {:>12}", "lambda", "rank1", "mAP", "crossview");
            for r in &rows {
                println!(
                    "{:>10} {:>7.2}% {:>7.2}% {:>12.4e}",
                    r.lambda,
                    100.0 * r.rank1,
                    100.0 * r.map,
                    r.crossview_distance
                );
            }
        }
    }
    Ok(EXIT_OK)
}
