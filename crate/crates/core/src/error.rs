use thiserror::Error;

pub type Result<T> = std::result::Result<T, SedError>;

#[derive(Debug, Error)]
pub enum SedError {
    #[error(transparent)]
    Nn(#[from] dcrnn_nn::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("invalid audio: {0}")]
    Audio(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("annotation line {line}: {reason}")]
    Annotation { line: usize, reason: String },

    #[error("training diverged at epoch {epoch}: non-finite {what}")]
    Divergence { epoch: usize, what: &'static str },
}

impl SedError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SedError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
