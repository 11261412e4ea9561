use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("token id {id} is out of range for a vocabulary of {size} tokens")]
    InvalidTokenId { id: u32, size: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("reference sequence is empty")]
    EmptyReference,
    #[error("sequence is empty")]
    EmptySequence,
    #[error("classifier has not been trained")]
    Untrained,
    #[error("training data must contain both positive and negative examples")]
    SingleClass,
    #[error("unknown strategy label {0:?}")]
    UnknownStrategy(String),
    #[error("strategy set is empty")]
    EmptyStrategySet,
    #[error("{path}:{line}: {message}")]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("training diverged at epoch {epoch}, instance {instance}: {detail}")]
    Diverged {
        epoch: usize,
        instance: usize,
        detail: String,
    },
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("malformed {kind} file: {message}")]
    Format { kind: &'static str, message: String },
    #[error("outputs file has {outputs} rows but the test split has {expected} instances")]
    Misaligned { outputs: usize, expected: usize },
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("[{component}] {source}")]
    Component {
        component: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the pipeline component that raised it.
    pub fn in_component(self, component: &'static str) -> Self {
        Error::Component {
            component,
            source: Box::new(self),
        }
    }

    pub(crate) fn format(kind: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            kind,
            message: message.into(),
        }
    }
}

/// Adds [`Error::in_component`] to results.
pub trait ResultExt<T> {
    fn component(self, name: &'static str) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn component(self, name: &'static str) -> Result<T> {
        self.map_err(|e| e.in_component(name))
    }
}
