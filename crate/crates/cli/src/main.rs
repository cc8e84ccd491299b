use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use revival_core::analysis::SpectrumWindow;
use revival_core::harness::{self, Experiment, ExperimentConfig};
use revival_core::Error;

#[derive(Parser)]
#[command(name = "revival", version, about = "Wave-packet revival and its optimal control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output.directory` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the seed of a random impurity block.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Window {
    None,
    Hann,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the control field and write all diagnostics.
    Run(Common),
    /// Optimize every (strength, cutoff) cell of the `[scan]` block.
    Scan {
        #[command(flatten)]
        common: Common,
        /// Concurrent cells.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Propagate without optimizing.
    Propagate {
        #[command(flatten)]
        common: Common,
        /// Drop the constant start field of the `[oct]` block.
        #[arg(long)]
        no_field: bool,
    },
    /// Lowest levels of the distorted well.
    Eigen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Power spectrum of a field CSV.
    Spectrum {
        /// Field file as written by `run`.
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "none")]
        window: Window,
    },
}

fn load(common: &Common) -> revival_core::Result<(Experiment, PathBuf)> {
    let mut cfg = ExperimentConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed_override {
        cfg.override_seed(seed)?;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    let exp = cfg.resolve()?;
    for w in &exp.warnings {
        log::warn!("{w}");
    }
    Ok((exp, out))
}

fn print(value: &impl serde::Serialize) -> revival_core::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: Cli) -> revival_core::Result<()> {
    match cli.command {
        Command::Run(common) => {
            let (exp, out) = load(&common)?;
            let (summary, _) = harness::run(&exp, &out)?;
            print(&summary)
        }
        Command::Scan { common, workers } => {
            let (exp, out) = load(&common)?;
            let surface = harness::scan(&exp, &out, workers)?;
            let failed = surface.cells.iter().filter(|c| c.error.is_some()).count();
            print(&serde_json::json!({ "cells": surface.cells.len(), "failed": failed }))
        }
        Command::Propagate { common, no_field } => {
            let (exp, out) = load(&common)?;
            print(&harness::propagate(&exp, &out, no_field)?)
        }
        Command::Eigen { common, count } => {
            let (exp, out) = load(&common)?;
            let basis = harness::eigen(&exp, &out, count)?;
            print(&basis.energies)
        }
        Command::Spectrum { field, out, window } => {
            let window = match window {
                Window::None => SpectrumWindow::None,
                Window::Hann => SpectrumWindow::Hann,
            };
            let s = harness::spectrum(&field, &out, window)?;
            let (omega, power) = s.peak_in(0.0, f64::INFINITY).unwrap_or((0.0, 0.0));
            print(&serde_json::json!({ "bins": s.omegas.len(), "total": s.total(), "peak_omega": omega, "peak_power": power }))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_numerical() => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
