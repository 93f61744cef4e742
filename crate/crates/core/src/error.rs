use thiserror::Error;

pub type Result<T> = std::result::Result<T, SeamError>;

#[derive(Debug, Error)]
pub enum SeamError {
    /// Invalid parameters or configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{id}` on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },

    /// Transient backend failure (network, timeout, 5xx) after all retries.
    #[error("transient backend error after {attempts} attempts: {message}")]
    Transient { attempts: u32, message: String },

    #[error("backend service error (status {status}): {body}")]
    Service { status: u16, body: String },

    #[error("backend protocol error: {0}")]
    Protocol(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("probe {probe}: {source}")]
    Probe {
        probe: String,
        #[source]
        source: Box<SeamError>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SeamError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SeamError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors raised by a scoring backend (local or remote).
    pub fn is_backend(&self) -> bool {
        match self {
            SeamError::Transient { .. }
            | SeamError::Service { .. }
            | SeamError::Protocol(_)
            | SeamError::Backend(_) => true,
            SeamError::Probe { source, .. } => source.is_backend(),
            _ => false,
        }
    }

    /// True for configuration problems.
    pub fn is_config(&self) -> bool {
        matches!(self, SeamError::Config(_))
    }
}
