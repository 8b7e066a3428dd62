//! Configuration, synthesis pipeline and experiment commands behind the
//! `srm-commute` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use commands::{cmd_ripple, cmd_simulate, cmd_sweep_beta, cmd_sweep_velocity, cmd_synth};
pub use config::ExperimentConfig;
pub use error::CliError;
pub use pipeline::{synthesize, Artifacts, Method, Synthesis};
