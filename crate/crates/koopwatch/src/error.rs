//! Crate-wide error type.

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line} of {path}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("window too small: need at least {needed} samples, got {got}")]
    WindowTooSmall { needed: usize, got: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("infeasible operating point: squared voltage {v2} at bus {bus}")]
    InfeasibleOperatingPoint { bus: usize, v2: f64 },

    #[error("invalid curve shift: {0}")]
    InvalidShift(String),

    #[error("fixed-point iteration did not converge at bus {bus}, step {step} (residual {residual:.3e})")]
    Convergence { bus: usize, step: usize, residual: f64 },

    #[error("zero-variance vector: correlation undefined for a constant input")]
    ZeroVariance,

    #[error("in window {window_index}: {source}")]
    InWindow {
        window_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json error in {path}: {message}")]
    Json { path: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Wrap an error with the sliding-window index it occurred in.
    pub fn in_window(self, window_index: usize) -> Self {
        Error::InWindow { window_index, source: Box::new(self) }
    }
}
