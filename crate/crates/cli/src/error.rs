use std::path::Path;

use thiserror::Error;

use srm_commutation::commutation::CommutationError;
use srm_commutation::gp::GpError;
use srm_commutation::motor::ModelError;
use srm_commutation::ripple::SolveError;
use srm_commutation::sim::SimError;
use srm_commutation::table_io::TableError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Commutation(#[from] CommutationError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 for configuration and file problems, 2 for solver or numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io { .. } | Self::Model(_) => 1,
            _ => 2,
        }
    }
}
