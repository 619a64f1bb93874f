use thiserror::Error;

/// Failures raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: {detail}")]
    Dimension { context: &'static str, detail: String },

    #[error("matrix is not Hurwitz: eigenvalue {re:+.6e}{im:+.6e}i has nonnegative real part")]
    NotHurwitz { re: f64, im: f64 },

    #[error("spectra overlap: eigenvalue {re:+.6e}{im:+.6e}i is shared within tolerance")]
    SpectralOverlap { re: f64, im: f64 },

    #[error("eigenvalue iteration did not converge after {iterations} sweeps")]
    EigenNoConvergence { iterations: usize },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("iteration in {context} did not converge: residual {residual:.3e} after {iterations} steps")]
    NoConvergence {
        context: &'static str,
        residual: f64,
        iterations: usize,
    },

    #[error("design failed: {0}")]
    Design(String),

    #[error("non-finite state at t = {t}")]
    Divergence { t: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
