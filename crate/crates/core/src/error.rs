use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("{what} out of range: {value}")]
    Range { what: &'static str, value: i64 },

    /// A matrix could not be inverted or decomposed; `tag` names the matrix.
    #[error("numerical failure in {tag}: {detail}")]
    Numerical { tag: String, detail: String },

    #[error("protocol {protocol}: {detail}")]
    Protocol { protocol: String, detail: String },

    #[error("query {query} has no true match in the gallery")]
    Evaluation { query: usize },

    #[error("assembly failed at {component}: {detail}")]
    Assembly {
        component: &'static str,
        detail: String,
    },

    #[error("{path}: line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    /// A pipeline stage failed; `stage` names it.
    #[error("stage `{stage}` failed")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Wraps `self` with the name of the failing stage.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad input rather than by the computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Argument(_)
            | Error::Dimension { .. }
            | Error::Range { .. }
            | Error::Protocol { .. }
            | Error::Parse { .. }
            | Error::Io { .. } => true,
            Error::Numerical { .. } | Error::Evaluation { .. } | Error::Assembly { .. } => false,
            Error::Stage { source, .. } => source.is_validation(),
        }
    }

    pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::Dimension { expected, found })
        }
    }
}
