use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation plan error: {0}")]
    Plan(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("evaluation of genome {genome_id} failed (trial seed {seed:#018x}): {message}")]
    Evaluation {
        genome_id: u64,
        seed: u64,
        message: String,
    },

    #[error("invalid scenario:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
