use thiserror::Error;

pub type Result<T, E = KoapError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KoapError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("window error: {0}")]
    Window(String),

    #[error("numerical error in segment `{segment}`: {detail}")]
    Numerical { segment: String, detail: String },

    #[error("labeled-data error: {0}")]
    LabeledData(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("orchestration error: {0}")]
    Orchestration(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl KoapError {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        KoapError::Dimension { context, expected, got }
    }
}
