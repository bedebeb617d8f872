//! Command-line definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "spinpol", version, about = "Spin polarization toolkit for S=1 defects")]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, env = "SPINPOL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Directory for CSV outputs and the run report.
    #[arg(long, global = true, default_value = "spinpol-out")]
    pub out_dir: PathBuf,
    /// Seed for simulated noise. Recorded in every report.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output format for tables.
    #[arg(long, global = true, default_value = "csv", value_parser = ["csv"])]
    pub format: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resonance fields of both transitions.
    Resonance(ResonanceArgs),
    /// Fit the relaxation model to a T1 dataset.
    FitT1(FitT1Args),
    /// Fit an inversion-recovery or echo-decay curve.
    FitDecay(FitDecayArgs),
    /// Populations and polarization from dark/light line intensities.
    Polarization(PolarizationArgs),
    /// Steady-state polarization against pump rate.
    PumpSweep(PumpSweepArgs),
    /// Synthetic decay curves, spectra or population trajectories.
    Simulate(SimulateArgs),
    /// Peak-to-peak linewidth and the implied relaxation rate.
    Linewidth(LinewidthArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Resonance(_) => "resonance",
            Command::FitT1(_) => "fit-t1",
            Command::FitDecay(_) => "fit-decay",
            Command::Polarization(_) => "polarization",
            Command::PumpSweep(_) => "pump-sweep",
            Command::Simulate(_) => "simulate",
            Command::Linewidth(_) => "linewidth",
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct ResonanceArgs {
    #[arg(long)]
    pub frequency_mhz: Option<f64>,
    #[arg(long)]
    pub temperature_k: Option<f64>,
    /// Constant zero-field splitting, overriding the temperature model.
    #[arg(long)]
    pub d_mhz: Option<f64>,
    /// `aligned` or `all111`.
    #[arg(long)]
    pub orientation: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct FitT1Args {
    /// T1 dataset CSV.
    pub dataset: Option<PathBuf>,
    /// Parameter to hold at its initial value; repeatable.
    #[arg(long, value_parser = ["a_const", "a_raman", "a_orbach", "delta_e"])]
    pub fix: Vec<String>,
}

#[derive(Debug, Args, Default)]
pub struct FitDecayArgs {
    /// Decay curve CSV.
    pub curve: Option<PathBuf>,
    /// Fix the equilibrium magnetization of an inversion-recovery fit.
    #[arg(long)]
    pub pin_m_eq: Option<f64>,
    /// Fit a stretched exponential (exploratory).
    #[arg(long)]
    pub stretch: bool,
}

#[derive(Debug, Args, Default)]
pub struct PolarizationArgs {
    /// Intensity table CSV.
    pub intensities: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct PumpSweepArgs {
    /// Level scheme file.
    #[arg(long)]
    pub scheme: Option<PathBuf>,
    /// Built-in scheme, `scheme-A` or `scheme-B`.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub pump_min: Option<f64>,
    #[arg(long)]
    pub pump_max: Option<f64>,
    #[arg(long)]
    pub points_per_decade: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct SimulateArgs {
    /// inversion-recovery, echo-decay, spectrum or trajectory.
    #[arg(long)]
    pub kind: Option<String>,
    /// Level scheme file (trajectory only).
    #[arg(long)]
    pub scheme: Option<PathBuf>,
    /// Built-in scheme (trajectory only).
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct LinewidthArgs {
    /// Spectrum CSV.
    pub spectrum: Option<PathBuf>,
    /// Field window `lo,hi` in mT.
    #[arg(long)]
    pub window: Option<String>,
    /// Calibration offset subtracted from the linewidth (MHz).
    #[arg(long)]
    pub offset_mhz: Option<f64>,
    /// Remove a linear baseline before locating the extrema.
    #[arg(long)]
    pub detrend: bool,
}
