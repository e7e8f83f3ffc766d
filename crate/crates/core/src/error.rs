use thiserror::Error;

/// Errors raised by the library. Variants map onto the CLI exit-code taxonomy
/// through [`Error::category`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{line}:{column}: syntax error: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{line}:{column}: unbound name `{name}`")]
    UnboundName {
        name: String,
        line: usize,
        column: usize,
    },

    #[error("malformed system definition: {0}")]
    Structure(String),

    #[error("system rejected: {0}")]
    Rejected(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("invertibility not established at {point:?}: {reason}")]
    NotInvertible { point: Vec<f64>, reason: String },

    #[error("non-finite value while evaluating {0}")]
    NonFinite(String),

    #[error("degenerate cocycle: {0}")]
    DegenerateCocycle(String),

    #[error("inconclusive frame at {point:?}: convergence gap {gap:e} after horizon {horizon}")]
    InconclusiveFrame {
        point: Vec<f64>,
        gap: f64,
        horizon: usize,
    },

    #[error("budget exceeded: {message} (try: {suggestion})")]
    Budget { message: String, suggestion: String },

    #[error("splitting not certified: {0}")]
    Uncertified(String),

    #[error("io error: {0}")]
    Io(String),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Budget,
    Inconclusive,
    Numerical,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Syntax { .. }
            | Error::UnboundName { .. }
            | Error::Structure(_)
            | Error::Rejected(_)
            | Error::Unsupported(_)
            | Error::Dimension(_)
            | Error::Domain(_)
            | Error::Io(_) => ErrorCategory::Config,
            Error::Budget { .. } => ErrorCategory::Budget,
            Error::InconclusiveFrame { .. } | Error::Uncertified(_) => ErrorCategory::Inconclusive,
            Error::NotInvertible { .. }
            | Error::NonFinite(_)
            | Error::DegenerateCocycle(_) => ErrorCategory::Numerical,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Domain(_) => "domain",
            Error::Syntax { .. } => "syntax",
            Error::UnboundName { .. } => "unbound-name",
            Error::Structure(_) => "structure",
            Error::Rejected(_) => "rejected",
            Error::Unsupported(_) => "unsupported",
            Error::NotInvertible { .. } => "invertibility-not-established",
            Error::NonFinite(_) => "non-finite",
            Error::DegenerateCocycle(_) => "degenerate-cocycle",
            Error::InconclusiveFrame { .. } => "inconclusive-frame",
            Error::Budget { .. } => "budget",
            Error::Uncertified(_) => "uncertified",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
