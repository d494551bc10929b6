use thiserror::Error;

pub type Result<T, E = MocError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MocError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("numeric error in `{path}`: {message}")]
    Numeric { path: String, message: String },

    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceLength { len: usize, max: usize },

    #[error("range error: {0}")]
    Range(String),

    #[error("config mismatch:\n{0}")]
    ConfigMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training aborted at step {step}: {source}")]
    TrainAbort {
        step: u64,
        #[source]
        source: Box<MocError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MocError {
    pub fn dim(msg: impl Into<String>) -> Self {
        MocError::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        MocError::Config(msg.into())
    }

    pub fn numeric(path: impl Into<String>, msg: impl Into<String>) -> Self {
        MocError::Numeric {
            path: path.into(),
            message: msg.into(),
        }
    }

    /// True for errors caused by non-finite values (NaN/Inf), anywhere in the chain.
    pub fn is_numeric(&self) -> bool {
        match self {
            MocError::Numeric { .. } => true,
            MocError::TrainAbort { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
