use std::io;
use std::path::PathBuf;

/// Crate-wide error type.
///
/// Variants split into three families that callers (notably the CLI) treat
/// differently: rejected input, numeric failure, and I/O failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The input violates a precondition (bad dimensions, out-of-range
    /// argument, failed validation, unknown name, ...).
    #[error("invalid input: {0}")]
    Rejected(String),

    /// Could not parse an input file or string.
    #[error("parse error: {0}")]
    Parse(String),

    /// Matrix is numerically singular for the requested tolerance.
    #[error("singular matrix: condition estimate {condition:.3e} exceeds 1/{rel_tol:.1e}")]
    Singular { condition: f64, rel_tol: f64 },

    /// An iterative kernel ran out of its iteration budget.
    #[error("{operation} did not converge within {limit} iterations (residual {residual:.3e})")]
    IterationBudget {
        operation: &'static str,
        residual: f64,
        limit: usize,
    },

    /// Repeated squaring did not settle below the requested tolerance.
    #[error("matrix powers did not settle within {max_doublings} doublings (last change {last_change:.3e})")]
    NoLimit {
        max_doublings: usize,
        last_change: f64,
    },

    /// Covariance recursion did not settle below the requested tolerance.
    #[error("no equilibrium within {max_waves} waves (last change {last_change:.3e})")]
    NoEquilibrium { max_waves: usize, last_change: f64 },

    /// Two routes to the same rank disagreed; the result is untrustworthy.
    #[error("rank check failed in {context}: expected {expected}, computed {computed}")]
    RankCheckFailed {
        expected: usize,
        computed: usize,
        context: &'static str,
    },

    /// Filesystem failure, with the offending path.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn rejected(msg: impl Into<String>) -> Self {
        Error::Rejected(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 invalid input, 3 numeric failure,
    /// 4 I/O failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Rejected(_) | Error::Parse(_) => 2,
            Error::Singular { .. }
            | Error::IterationBudget { .. }
            | Error::NoLimit { .. }
            | Error::NoEquilibrium { .. }
            | Error::RankCheckFailed { .. } => 3,
            Error::Io { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
