use thiserror::Error;

/// Errors produced by the STAP pipeline.
#[derive(Debug, Error)]
pub enum StapError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// Every sample of one array element is zero across all pulses and
    /// snapshots, so its inverse gain cannot be estimated.
    #[error("array element {element} carries no energy; its gain/phase is unidentifiable")]
    DegenerateChannel { element: usize },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("experiment spec error: {0}")]
    Spec(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("self-checks failed: {0}")]
    ChecksFailed(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl StapError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Whether the error stems from user input (configuration, spec, parameters)
    /// rather than from a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::InvalidConfig(_)
                | Self::InvalidParameter(_)
                | Self::Spec(_)
                | Self::Json(_)
                | Self::DimensionMismatch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, StapError>;
