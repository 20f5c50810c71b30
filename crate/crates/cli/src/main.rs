//! `pneu`: experiments on the simulated pressure-control stack.
//!
//! Every subcommand reads an optional JSON config, applies command-line
//! overrides, echoes the resolved config to `<out>/config.json` and writes
//! its CSV/JSON artifacts next to it. Outputs are byte-identical for the same
//! config and seed; wall-clock measurements go to `timings.json` only.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pneu_core::dynamics::ModelKind;

use commands::{CliError, Output};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "pneu", version, about = "Simulated RS-485 pressure-control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration (see docs/config.schema.json).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory, created if needed.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Seed applied to every section of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Measure loop rates for 1..=N loopback devices on the simulated bus.
    BusBench {
        #[command(flatten)]
        common: Common,
        /// Largest device count measured (rows 1..=N).
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..=4))]
        devices: Option<u64>,
        /// Polling sweeps per row.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        iterations: Option<u64>,
        /// Host overhead in seconds, used for both the per-sweep and the
        /// per-transaction cost; disables jitter.
        #[arg(long)]
        overhead: Option<f64>,
    },
    /// Step all chambers of one device and summarize repeated trials.
    Step {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        trials: Option<u64>,
    },
    /// Track a pressure reference with one or more devices.
    Track {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..=4))]
        devices: Option<u64>,
        /// Set targets directly instead of over the bus.
        #[arg(long)]
        direct: bool,
    },
    /// Generate a synthetic closed-loop dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
        /// Measurement noise as a fraction of each chamber's pressure
        /// standard deviation.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Fit one model to one or more chambers of a dataset.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV; a synthetic one is generated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// linear, nonlinear or parametric.
        #[arg(long)]
        model: Option<ModelKind>,
        /// Chamber to fit; repeat for several.
        #[arg(long, value_parser = clap::value_parser!(u64).range(0..4))]
        chamber: Vec<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        restarts: Option<u64>,
        /// Fit on the first N samples only.
        #[arg(long)]
        train_samples: Option<usize>,
    },
    /// Fit all models to all chambers and score them on held-out data.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV; a synthetic one is generated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        restarts: Option<u64>,
        /// Samples in the training split.
        #[arg(long)]
        train_samples: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::BusBench { common, .. }
        | Command::Step { common, .. }
        | Command::Track { common, .. }
        | Command::Generate { common, .. }
        | Command::Fit { common, .. }
        | Command::Compare { common, .. } => common,
    };
    let mut config: RunConfig = commands::load_config(common.config.as_deref())?;
    if common.seed.is_some() {
        config.seed = common.seed;
    }
    config.apply_seed();

    let mut inputs = vec![];
    inputs.extend(common.config.clone());
    match &cli.command {
        Command::BusBench {
            devices,
            iterations,
            overhead,
            ..
        } => {
            if let Some(d) = devices {
                config.bench.devices = *d as usize;
            }
            if let Some(i) = iterations {
                config.bench.iterations = *i as usize;
            }
            if let Some(o) = overhead {
                if !(*o >= 0.0 && o.is_finite()) {
                    return Err(CliError::Usage(format!("overhead must be >= 0, got {o}")));
                }
                config.bus.per_sweep_overhead_s = *o;
                config.bus.per_transaction_overhead_s = *o;
                config.bus.overhead_jitter_s = 0.0;
            }
        }
        Command::Step { trials, .. } => {
            if let Some(t) = trials {
                config.step.trials = *t as usize;
            }
        }
        Command::Track { devices, direct, .. } => {
            if let Some(d) = devices {
                config.track.devices = *d as usize;
            }
            if *direct {
                config.track.on_bus = false;
            }
        }
        Command::Generate { samples, noise, .. } => {
            if let Some(s) = samples {
                config.synthetic.samples = *s;
            }
            if let Some(n) = noise {
                config.synthetic.measurement_noise_rel = *n;
            }
        }
        Command::Fit {
            data,
            model,
            chamber,
            restarts,
            train_samples,
            ..
        } => {
            if data.is_some() {
                config.fit.data = data.clone();
            }
            if let Some(m) = model {
                config.fit.model = *m;
            }
            if !chamber.is_empty() {
                config.fit.chambers = chamber.iter().map(|&c| c as usize).collect();
            }
            if let Some(r) = restarts {
                config.fit.options.n_restarts = *r as usize;
            }
            if train_samples.is_some() {
                config.fit.train_samples = *train_samples;
            }
            inputs.extend(config.fit.data.clone());
        }
        Command::Compare {
            data,
            restarts,
            train_samples,
            ..
        } => {
            if data.is_some() {
                config.compare.data = data.clone();
            }
            if let Some(r) = restarts {
                config.compare.options.n_restarts = *r as usize;
            }
            if let Some(n) = train_samples {
                config.compare.train_samples = *n;
            }
            inputs.extend(config.compare.data.clone());
        }
    }

    let input_refs: Vec<&std::path::Path> = inputs.iter().map(|p| p.as_path()).collect();
    let out = Output::create(&common.out, &input_refs)?;
    out.write_json("config.json", &config)?;
    match &cli.command {
        Command::BusBench { .. } => commands::bus_bench(&config, &out),
        Command::Step { .. } => commands::step(&config, &out),
        Command::Track { .. } => commands::track(&config, &out),
        Command::Generate { .. } => commands::generate_dataset(&config, &out),
        Command::Fit { .. } => commands::fit_models(&config, &out),
        Command::Compare { .. } => commands::compare(&config, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pneu: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
