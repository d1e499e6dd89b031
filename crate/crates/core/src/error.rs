use thiserror::Error;

/// Errors raised by the estimator pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("degenerate ellipse (det = {det:e})")]
    DegenerateEllipse { det: f64 },

    #[error("singular innovation covariance (det = {det:e})")]
    SingularInnovation { det: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ensemble member {member}: {source}")]
    AtMember {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Ingest {
        path: String,
        line: usize,
        message: String,
    },

    #[error("numerical overflow: {0}")]
    NumericalOverflow(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("gradient check failed: worst parameter {index} (analytic {analytic:e}, numeric {numeric:e}, relative error {rel_error:e})")]
    GradCheckFailure {
        index: usize,
        analytic: f64,
        numeric: f64,
        rel_error: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub fn at_member(self, member: usize) -> Self {
        Error::AtMember {
            member,
            source: Box::new(self),
        }
    }

    /// Innermost error with step/member context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::AtMember { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 input error, 3 numeric failure, 4 artifact mismatch.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Ingest { .. } | Error::InvalidArgument(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::ArtifactMismatch(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
