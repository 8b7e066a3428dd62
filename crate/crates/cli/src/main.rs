use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use srm_cli::{commands, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "srm-commute",
    version,
    about = "Optimal commutation synthesis and simulation"
)]
struct Cli {
    /// Experiment config (TOML); defaults reproduce the reference study.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Accepted for compatibility; every algorithm is deterministic.
    #[arg(long, global = true)]
    seedless: bool,
    /// Worker threads for sweeps and fits.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the ripple problem, fit the GPs and write the artifacts.
    Synth,
    /// Closed-loop RMS error and energy over velocities and methods.
    SweepVelocity,
    /// Ratios against the baseline over the ripple weight beta.
    SweepBeta,
    /// Open-loop inter-sample ripple traces.
    Ripple,
    /// One closed-loop run with its full time series.
    Simulate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = cli.out {
        config.output_dir = out;
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let dir = config.output_dir.display().to_string();
    match cli.command {
        Command::Synth => {
            let s = commands::cmd_synth(&config)?;
            println!("{}", s.report());
            println!("wrote artifacts to {dir}");
        }
        Command::SweepVelocity => {
            let cells = commands::cmd_sweep_velocity(&config)?;
            let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
            println!(
                "{} cells ({failed} failed) written to {dir}/{}",
                cells.len(),
                commands::VELOCITY_SWEEP_FILE
            );
        }
        Command::SweepBeta => {
            let cells = commands::cmd_sweep_beta(&config)?;
            let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
            println!(
                "{} cells ({failed} failed) written to {dir}/{}",
                cells.len(),
                commands::BETA_SWEEP_FILE
            );
        }
        Command::Ripple => {
            let tr = commands::cmd_ripple(&config)?;
            println!(
                "{} rows at {:.6} rad/s written to {dir}/{}",
                tr.t.len(),
                tr.velocity,
                commands::RIPPLE_FILE
            );
        }
        Command::Simulate => {
            let m = commands::cmd_simulate(&config)?;
            print!("{}", m.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
