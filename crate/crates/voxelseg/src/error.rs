use std::path::PathBuf;

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("file format: {0}")]
    Format(String),
    #[error("{0}")]
    Invalid(String),
    #[error("non-finite loss at iteration {iter} ({detail})")]
    NonFiniteLoss { iter: usize, detail: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
