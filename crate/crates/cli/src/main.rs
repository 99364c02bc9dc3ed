use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sls_core::harness::{self, ExperimentConfig};

/// Multi-seed benchmark of Armijo line-search optimizers.
#[derive(Parser)]
#[command(name = "sls-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings that override every experiment in the loaded files.
#[derive(clap::Args)]
struct Overrides {
    /// Output root directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of seeds per experiment.
    #[arg(long)]
    seeds: Option<usize>,
    /// Number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run all experiments of a config file and write the summary.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run experiments from one or more config files and write aligned
    /// per-step EMA loss columns.
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write the step-size trajectories of a run directory to trace.csv.
    Trace { run_dir: PathBuf },
}

fn load(paths: &[PathBuf], o: &Overrides) -> sls_core::Result<Vec<ExperimentConfig>> {
    let mut cfgs = Vec::new();
    for p in paths {
        cfgs.extend(harness::load_config(p)?);
    }
    for c in &mut cfgs {
        if let Some(out) = &o.out {
            c.out = out.clone();
        }
        if let Some(s) = o.seeds {
            c.seeds = s;
        }
        if let Some(e) = o.epochs {
            c.epochs = e;
        }
        harness::validate(c)
            .map_err(|e| sls_core::Error::Config(format!("experiment `{}`: {e}", c.name)))?;
    }
    Ok(cfgs)
}

fn execute(cli: Cli) -> sls_core::Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfgs = load(&[config], &overrides)?;
            let rows = harness::run_all(&cfgs)?;
            print!("{}", harness::render_summary_table(&rows));
        }
        Command::Compare { configs, overrides } => {
            let cfgs = load(&configs, &overrides)?;
            let path = harness::compare(&cfgs)?;
            println!("{}", path.display());
        }
        Command::Trace { run_dir } => {
            let path = harness::emit_stepsize_trace(&run_dir)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
