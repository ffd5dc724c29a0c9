use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range input data.
    #[error("invalid input: {0}")]
    Input(String),

    /// Incoherent settings (empty whale grid, bad grid spacing, ...).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite objective contribution at observation {index}")]
    NonFinite { index: usize },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("fit failed for acoustic exponent m = {m}: {source}")]
    Exponent {
        m: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by the data rather than by configuration or I/O.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Input(_) | Error::NonFinite { .. } | Error::Csv(_) | Error::Json(_) => true,
            Error::Exponent { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}
