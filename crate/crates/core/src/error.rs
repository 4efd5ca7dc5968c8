use std::path::PathBuf;

/// Errors produced anywhere in the tracking pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("box lies outside the feature map: {0}")]
    OutOfBounds(String),

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("box {index}: {source}")]
    AtBox {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sampling exhausted after {draws} consecutive rejected draws ({accepted}/{requested} accepted)")]
    SamplingExhausted {
        draws: usize,
        accepted: usize,
        requested: usize,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sequence generation failed: {0}")]
    Generation(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss {
        iteration: usize,
        diagnostic: Option<PathBuf>,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_box(index: usize, source: Error) -> Self {
        Error::AtBox {
            index,
            source: Box::new(source),
        }
    }
}
