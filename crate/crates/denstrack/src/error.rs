//! Crate-wide error type and result alias.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A coordinate, parameter, or time step was NaN/infinite or out of its
    /// admissible range.
    #[error("domain error: {0}")]
    Domain(String),

    /// The diffusion matrix failed the uniform ellipticity requirement at a
    /// grid point, so the Gaussian one-step kernel is degenerate there.
    #[error("ellipticity violated at x = {x:?}: smallest eigenvalue {min_eig:.3e} <= 0")]
    Ellipticity { x: Vec<f64>, min_eig: f64 },

    /// Two grid densities with different `GridSpec`s were combined.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Invalid grid geometry (ordering, cell counts, dimension).
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Invalid model family parameters.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Invalid initial density parameters.
    #[error("invalid density spec: {0}")]
    InvalidDensity(String),

    /// A stated precondition of an operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A density file (CSV) could not be parsed or failed validation.
    #[error("format error: {0}")]
    Format(String),

    /// The requested combination of model/density/reference is not supported.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A grid too coarse to resolve the requested oscillation.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// Run configuration rejected at parse or validation time.
    #[error("config error: {0}")]
    Config(String),

    /// A propagation step produced NaN; the message carries the diagnostics
    /// dump of the failing step.
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for anything the user can fix in the
    /// config or inputs, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::Ellipticity { .. }
            | Error::GridMismatch(_)
            | Error::InvalidGrid(_)
            | Error::InvalidModel(_)
            | Error::InvalidDensity(_)
            | Error::Precondition(_)
            | Error::Format(_)
            | Error::Unsupported(_)
            | Error::Resolution(_)
            | Error::Config(_) => 2,
            Error::NumericalBreakdown(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
        }
    }
}
