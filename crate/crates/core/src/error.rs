use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while parsing a multiplier lookup-table file.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LutError {
    #[error("bad LUT magic at byte offset {offset}: expected \"AXLUT\\0\\x01\\0\"")]
    BadMagic { offset: usize },
    #[error("truncated LUT: header declares {declared} entries, payload holds {found}")]
    Truncated { declared: usize, found: usize },
    #[error("LUT has trailing data: {extra} bytes after entry {declared}")]
    TrailingBytes { declared: usize, extra: usize },
    #[error("LUT entry {index} (byte offset {offset}) = {value} is outside [-32768, 32767]")]
    OutOfRange { index: usize, offset: usize, value: i64 },
}

/// Errors raised while parsing IDX (MNIST) files.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("IDX header truncated: {len} bytes")]
    ShortHeader { len: usize },
    #[error("IDX payload truncated: header promises {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid fault descriptor: {0}")]
    Descriptor(String),
    #[error("values are not comparable: {0}")]
    Comparison(String),
    #[error("non-finite input rejected on the quantized path: {0}")]
    NonFiniteInput(String),
    #[error("training diverged (seed {seed}, epoch {epoch}, step {step}): loss = {loss}")]
    Divergence {
        seed: u64,
        epoch: usize,
        step: usize,
        loss: f32,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Lut(#[from] LutError),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn in_file(path: impl Into<PathBuf>, source: Error) -> Self {
        Error::InFile {
            path: path.into(),
            source: Box::new(source),
        }
    }

    /// True for errors caused by bad input data rather than bad usage.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_) | Error::InvalidArgument(_))
    }
}
