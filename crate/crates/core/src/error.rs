use thiserror::Error;

/// Errors produced by the simulation and analysis routines.
///
/// The variants are grouped by the exit-code class the command line maps
/// them onto (see [`Error::class`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("Krylov propagation did not converge: achieved residual {residual:.3e} above tolerance {tolerance:.3e}")]
    Convergence { residual: f64, tolerance: f64 },

    #[error("resonant energy denominator at site {site}, neighbor sector {sector}: |delta| = {delta:.3e}")]
    Singularity { site: usize, sector: String, delta: f64 },

    #[error("fit did not converge after {iterations} iterations (best cost {cost:.3e}, best parameters {best:?})")]
    Fit {
        iterations: usize,
        cost: f64,
        best: Vec<f64>,
    },

    #[error("time grids do not align: {0}")]
    Alignment(String),

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Resource,
    Convergence,
    Singularity,
    Other,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Resource(_) => ErrorClass::Resource,
            Error::Convergence { .. } | Error::Fit { .. } => ErrorClass::Convergence,
            Error::Singularity { .. } => ErrorClass::Singularity,
            _ => ErrorClass::Other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
