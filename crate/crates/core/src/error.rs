use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("nifti: {0}")]
    Nifti(String),
    #[error("png: {0}")]
    Png(String),
    #[error("frames: {0}")]
    Frames(String),
    #[error("lut: {0}")]
    Lut(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("threshold: {0}")]
    Threshold(String),
    #[error("registration: {0}")]
    Registration(String),
    #[error("singular affine transform (det = {0})")]
    SingularAffine(f64),
    #[error("phantom: {0}")]
    Phantom(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("overlay: {0}")]
    Overlay(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            why: why.into(),
        }
    }
}
