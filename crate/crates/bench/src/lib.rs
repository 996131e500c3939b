//! Experiment runner for nested SMC: configuration, replicated runs against
//! exact oracles, and CSV output tied to a manifest.

pub mod budget;
pub mod config;
pub mod experiment;
pub mod output;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Run(#[from] nsmc::Error),
    #[error("oracle infeasible: {0}")]
    OracleInfeasible(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// Process exit code: 2 for configuration errors, 3 for weight
    /// degeneracy, 4 when an exact oracle is infeasible, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::OracleInfeasible(_) => 4,
            BenchError::Run(e) if e.is_degeneracy() => 3,
            BenchError::Run(e) => match e.root_cause() {
                nsmc::Error::OracleInfeasible(_) | nsmc::Error::EnumerationInfeasible { .. } => 4,
                nsmc::Error::InvalidParameter(_) | nsmc::Error::DimensionMismatch { .. } => 2,
                _ => 1,
            },
            BenchError::Io(_) => 1,
        }
    }
}
