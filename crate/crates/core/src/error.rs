use thiserror::Error;

/// Errors raised by the model, metric, sampling and estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("lambda must be nonzero (entry {index})")]
    ZeroEigenvalue { index: usize },

    #[error("model needs at least two eigenvalues, got {0}")]
    DimensionTooSmall(usize),

    #[error("dimension mismatch: model has k={expected}, point has {found} coordinates")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("chart undefined at singularity")]
    AtSingularity,

    #[error("base point outside the unit polydisc (|x_{index}| = {modulus})")]
    OutsidePolydisc { index: usize, modulus: f64 },

    #[error("non-finite coordinate in point")]
    NonFinite,

    #[error("zeta = {re}{im:+}i is outside the chart polygon")]
    OutsideDomain { re: f64, im: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("finite-difference stencil leaves the domain")]
    StencilOutsideDomain,

    #[error("sublevel set escapes the sampled window")]
    WindowEscape,

    #[error("degenerate transversal: lambda * x vanishes")]
    DegenerateTransversal,

    #[error("time {t} outside path range [0, {end}]")]
    TimeOutOfRange { t: f64, end: f64 },

    #[error("path covers g-time {covered}, needs {needed}")]
    PathTooShort { covered: f64, needed: f64 },

    #[error("geodesic left the domain immediately")]
    ImmediateExit,

    #[error("degenerate geodesic: {0}")]
    DegenerateGeodesic(String),

    #[error("every path was absorbed before the horizon")]
    AllAbsorbed,

    #[error("spectrum has a single exponent cluster; no nontrivial partition")]
    SingleCluster,

    #[error("root finding did not converge: {0}")]
    NoConvergence(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("csv error: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
