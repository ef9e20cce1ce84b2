use thiserror::Error;

/// Errors raised by grid construction, field calculus and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("rank mismatch: {0}")]
    RankMismatch(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("region contains no grid nodes")]
    EmptyRegion,

    #[error("unknown coefficient family `{0}`")]
    UnknownFamily(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The periodic compatibility condition <m_per b_per> = 0 fails, so no
    /// periodic corrector exists.
    #[error(
        "compatibility condition violated: the periodic drift <m_per b_per> = [{}] must vanish",
        fmt_values(.drift)
    )]
    DriftViolation { drift: Vec<f64> },

    #[error("{solver} did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("discretization fault: {0}")]
    DiscretizationFault(String),

    #[error("routes disagree: {what} discrepancy {discrepancy:.3e} exceeds {tolerance:.3e}")]
    RouteDisagreement {
        what: String,
        discrepancy: f64,
        tolerance: f64,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn fmt_values(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(", ")
}
