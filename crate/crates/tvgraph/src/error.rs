use thiserror::Error;

/// Errors produced by the estimation and testing pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("no kernel support at z = {z} with bandwidth h = {h}")]
    NoSupport { z: f64, h: f64 },

    #[error("CLIME linear program infeasible for column {column} at lambda = {lambda}")]
    Infeasible { column: usize, lambda: f64 },

    #[error("LP solver stalled after {iterations} iterations (residual {residual:.3e})")]
    SolverStall { iterations: usize, residual: f64 },

    #[error("de-biasing denominator degenerate at z = {z}, column {j} (value {value:.3e})")]
    DegenerateDenominator { z: f64, j: usize, value: f64 },

    #[error("edge selector is empty at every grid point")]
    EmptySelector,

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("column {column} has zero sample variance")]
    ZeroVariance { column: String },

    #[error("matrix is not symmetric within tolerance")]
    Asymmetric,

    #[error("exhaustive critical-set oracle limited to d <= 6, got d = {d}")]
    OracleScale { d: usize },

    #[error("step-down procedure exceeded the iteration cap of {cap}")]
    Stall { cap: usize },

    #[error("cross-validation fold {fold} has no kernel support at z = {z}")]
    FoldNoSupport { fold: usize, z: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
