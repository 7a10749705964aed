use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("probabilities sum to {sum}, not 1")]
    Normalization { sum: f64 },
    #[error("structural error: {0}")]
    Structural(String),
    #[error("capacity error: {count} walkers exceed the {platform} cap of {cap}")]
    Capacity { count: u64, cap: u64, platform: String },
    #[error("compile error: {0}")]
    Compile(String),
    #[error("no admissible time step: {0}")]
    Infeasible(String),
    #[error("chain construction produced an invalid row: {0}")]
    Construction(String),
    #[error("point is not in the hemisphere of the projection center (dot = {dot})")]
    Hemisphere { dot: f64 },
    #[error("incomplete ensemble: {0}")]
    IncompleteEnsemble(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("undefined: {0}")]
    Undefined(String),
}

pub type Result<T> = std::result::Result<T, Error>;
