//! Command-line front end for `spinpol-core`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod report;

use std::ffi::OsString;

use clap::Parser;

use cli::{Cli, Command};
use commands::Context;
use config::Config;
use error::CliError;
use report::{OutDir, RunReport};

/// Runs a parsed command line and writes `<command>_report.json`.
pub fn execute(cli: Cli) -> Result<RunReport, CliError> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::empty(),
    };
    let ctx = Context {
        config,
        out: OutDir::create(&cli.out_dir)?,
        seed: cli.seed,
    };
    let mut report = match &cli.command {
        Command::Resonance(a) => commands::resonance(&ctx, a),
        Command::FitT1(a) => commands::fit_t1(&ctx, a),
        Command::FitDecay(a) => commands::fit_decay_cmd(&ctx, a),
        Command::Polarization(a) => commands::polarization(&ctx, a),
        Command::PumpSweep(a) => commands::pump_sweep(&ctx, a),
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::Linewidth(a) => commands::linewidth(&ctx, a),
    }?;
    if let Some(p) = &cli.config {
        report.param("config_file", p.display().to_string());
    }
    let name = format!("{}_report.json", cli.command.name());
    ctx.out.write_untracked(&name, &report.to_json())?;
    Ok(report)
}

/// Parses `argv` (including the program name) and runs it.
pub fn run_from<I, T>(argv: I) -> Result<RunReport, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    execute(cli)
}
