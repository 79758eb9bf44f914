use thiserror::Error;

/// Errors raised by the data collection, design and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration produced non-finite values at t = {time}")]
    Divergence { time: f64 },

    #[error("insufficient excitation: {0}")]
    NotExciting(String),

    #[error("time {0} is not aligned to the sampling grid")]
    OffGrid(f64),

    #[error("no data-based representation: residual {residual:e} exceeds {tolerance:e}")]
    Representation { residual: f64, tolerance: f64 },

    #[error("LMI program infeasible: best margin {margin:e}")]
    Infeasible { margin: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("regulator equations have no solution: relative residual {residual:e}")]
    NoRegulatorSolution { residual: f64 },

    #[error("topology: {0}")]
    Topology(String),

    #[error("controller contract violated: {0}")]
    Contract(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
