use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value out of representable range: {0}")]
    Range(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("coder underflow: refill needed but the bit-stream is empty")]
    Underflow,

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("point outside declared domain: {0}")]
    Domain(String),

    #[error("compression failure: {0}")]
    CompressionFailure(String),

    #[error("layer {index}: {source}")]
    Layer {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient auxiliary bits: {shortfall_words} more {word_bits}-bit words needed per stream")]
    InsufficientAuxBits { shortfall_words: u64, word_bits: u32 },

    #[error("corrupt stream: {0}")]
    Corrupt(String),

    #[error("model hash mismatch: container {expected}, model {found}")]
    HashMismatch { expected: String, found: String },

    #[error("unsupported container version {0}")]
    Version(u16),

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("invalid model at {path}: {message}")]
    Model { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_layer(self, index: usize) -> Error {
        match self {
            e @ Error::Layer { .. } => e,
            e => Error::Layer {
                index,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, skipping layer wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Layer { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_compression_failure(&self) -> bool {
        matches!(self.root(), Error::CompressionFailure(_))
    }

    pub(crate) fn model(path: impl Into<String>, message: impl Into<String>) -> Error {
        Error::Model {
            path: path.into(),
            message: message.into(),
        }
    }
}
