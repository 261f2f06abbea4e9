use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Modulation contrast too low for the min/max normalization.
    #[error("degenerate contrast: mu1 ({mu1}) <= mu0 ({mu0})")]
    DegenerateContrast { mu0: f64, mu1: f64 },

    #[error("ray misses the aperture at scan step {step}, depth {depth_um} um")]
    ApertureMiss { step: usize, depth_um: f64 },

    #[error("no valid candidate offset for pixel ({row}, {col})")]
    NoCandidates { row: usize, col: usize },

    #[error("solver did not converge after {iterations} iterations")]
    Convergence { iterations: usize, best: Vec<f64> },

    #[error("signal has zero total mass")]
    EmptySignal,

    #[error("no usable signal: {0}")]
    NoSignal(String),

    #[error("no pixels pass selection")]
    NoPixels,

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn parse(path: impl AsRef<std::path::Path>, message: impl ToString) -> Self {
        Error::Parse { path: path.as_ref().display().to_string(), message: message.to_string() }
    }
}
