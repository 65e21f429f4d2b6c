use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A scorer call failed while decoding; `step` is the zero-based target position.
    #[error("decode failed at step {step}: {source}")]
    Decode {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// The remote server answered, but the answer violates the wire contract.
    #[error("protocol error (query {index:?}): {message}")]
    Protocol {
        index: Option<usize>,
        message: String,
    },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("sentence {id}: {source}")]
    Sentence {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

/// Which half of a pivot pipeline produced an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stage {
    Pivot(String),
    Final,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Pivot(lang) => write!(f, "pivot ({lang})"),
            Stage::Final => f.write_str("final"),
        }
    }
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn protocol(index: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Protocol {
            index,
            message: msg.into(),
        }
    }

    /// True for failures of the model backend or its transport, as opposed to
    /// caller mistakes.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::Backend(_) | Error::Protocol { .. } | Error::Io(_) => true,
            Error::Decode { source, .. }
            | Error::Stage { source, .. }
            | Error::Sentence { source, .. } => source.is_backend(),
            _ => false,
        }
    }
}
