use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Clone, Error)]
#[non_exhaustive]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("grid mismatch: inner products require identical quadrature steps ({left} vs {right})")]
    GridMismatch { left: f64, right: f64 },

    #[error("vector is not unit length: weighted squared norm {norm_sq} departs from 1 beyond 1e-10")]
    NotUnit { norm_sq: f64 },

    #[error("cannot normalize a vector with near-zero norm")]
    ZeroNorm,

    #[error("transport between antipodal points is undefined (geodesic distance within 1e-6 of pi)")]
    AntipodalPoints,

    #[error("iteration failed to converge within {iterations} steps (last update {last_step:e})")]
    NonConvergence { iterations: usize, last_step: f64 },

    #[error("weights sum to zero; the weighted mean is undefined")]
    ZeroWeightSum,

    #[error("input is empty")]
    EmptyInput,

    #[error("spatial parameter is unidentified: the moment polynomial is constant (b = c = 0)")]
    Unidentified,

    #[error("all pairwise inner products vanish; the data carry no variation")]
    ZeroGram,

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("degenerate test statistic: {0}")]
    DegenerateTest(String),

    #[error("bootstrap aborted: {failures} of {replicates} replicate estimations failed (limit {limit})")]
    BootstrapFailures {
        failures: usize,
        replicates: usize,
        limit: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
