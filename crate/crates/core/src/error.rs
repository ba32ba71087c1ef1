use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{layer}: expected input shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        layer: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("{layer}: cache does not belong to this layer or input")]
    StaleCache { layer: String },

    #[error("label {label} at batch index {index} is out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("parameter `{0}` not found")]
    UnknownParameter(String),

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("cannot mirror layer {0} in an inversion network")]
    Unmirrorable(String),

    #[error("invalid privacy parameter: {0}")]
    Privacy(String),

    #[error("cannot group {clients} clients into groups of at least {k}")]
    TooFewClients { clients: usize, k: usize },

    #[error("smashed tensors of clients {offenders:?} do not match shape {expected:?}")]
    GroupShapeMismatch {
        expected: Vec<usize>,
        offenders: Vec<usize>,
    },

    #[error("aggregation failed: {0}")]
    Aggregation(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}: {message} at offset {offset}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{0}")]
    Data(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("client {client}, batch {batch}: {source}")]
    Client {
        client: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}
