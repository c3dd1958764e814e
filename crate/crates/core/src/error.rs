use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for `{tensor}`: expected {expected}, got {actual}")]
    Dimension {
        tensor: String,
        expected: String,
        actual: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("batch normalization needs at least 2 samples in training mode, got {0}")]
    DegenerateBatch(usize),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("non-finite value in `{param}`")]
    NonFinite { param: String },

    #[error("non-finite training loss at epoch {epoch}, client {client}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        client: usize,
        batch: usize,
    },

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("parameter file format error: {0}")]
    Format(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(tensor: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            tensor: tensor.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
