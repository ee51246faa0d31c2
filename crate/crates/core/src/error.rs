use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("model `{model}` evaluated to a non-finite value at x = {x:?}, theta = {theta:?}")]
    Evaluation {
        model: String,
        x: Vec<f64>,
        theta: Vec<f64>,
    },

    #[error("row {row}: {source}")]
    AtRow {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{what} is singular or ill-conditioned (condition number {condition:.3e})")]
    Singular { what: String, condition: f64 },

    #[error("least-squares fit did not converge after {iterations} iterations (last SSE {sse:.6e})")]
    NotConverged {
        iterations: usize,
        sse: f64,
        theta: Vec<f64>,
        trace: Vec<crate::nls::TraceStep>,
    },

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("fixture required: {name} was not found at {}", path.display())]
    FixtureMissing { name: String, path: PathBuf },

    #[error("fixture {name} failed validation: {reason}")]
    FixtureIntegrity { name: String, reason: String },

    #[error("unknown model `{0}` (known: michaelis-menten, hougen-watson)")]
    UnknownModel(String),

    #[error("simulation aborted: {failed} of {total} refits failed (limit {}%)", limit * 100.0)]
    SimulationAborted {
        failed: usize,
        total: usize,
        limit: f64,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn at_row(self, row: usize) -> Self {
        Error::AtRow {
            row,
            source: Box::new(self),
        }
    }

    /// True for argument-class errors: bad dimensions, values, or input files.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Dimension { .. }
            | Error::Argument(_)
            | Error::UnknownModel(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::FixtureMissing { .. } => true,
            Error::AtRow { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}
