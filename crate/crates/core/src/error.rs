use thiserror::Error;

/// Errors raised by samplers, models and oracles.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty weight set")]
    EmptyWeights,

    #[error("degenerate weights: every weight is zero")]
    DegenerateWeights,

    #[error("weight is NaN at index {index}")]
    NanWeight { index: usize },

    #[error("full degeneracy at step {step}: all resampling weights are zero")]
    FullDegeneracy { step: usize },

    #[error("backward degeneracy at step {step}: all backward weights are zero")]
    BackwardDegeneracy { step: usize },

    #[error("proposal density zero at own sample (step {step}, particle {particle})")]
    ZeroProposalDensity { step: usize, particle: usize },

    #[error("sampler construction failed at step {step}, particle {particle}: {source}")]
    Factory {
        step: usize,
        particle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("level {level}: {source}")]
    Level {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("not a stochastic matrix: {0}")]
    NotStochastic(String),

    #[error("enumeration infeasible: {states} states exceeds limit {limit}")]
    EnumerationInfeasible { states: usize, limit: usize },

    #[error("oracle infeasible: {0}")]
    OracleInfeasible(String),
}

impl Error {
    /// Wraps an error raised while constructing the sampler for ancestor `particle` at `step`.
    pub fn at_particle(self, step: usize, particle: usize) -> Error {
        Error::Factory {
            step,
            particle,
            source: Box::new(self),
        }
    }

    /// Attaches a nesting level label.
    pub fn at_level(self, level: usize) -> Error {
        Error::Level {
            level,
            source: Box::new(self),
        }
    }

    /// Strips factory and level wrappers and returns the innermost error.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::Factory { source, .. } | Error::Level { source, .. } => source.root_cause(),
            other => other,
        }
    }

    /// True when the innermost cause is a weight degeneracy of some kind.
    pub fn is_degeneracy(&self) -> bool {
        matches!(
            self.root_cause(),
            Error::DegenerateWeights
                | Error::FullDegeneracy { .. }
                | Error::BackwardDegeneracy { .. }
                | Error::ZeroProposalDensity { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
