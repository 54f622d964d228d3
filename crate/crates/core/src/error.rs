use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data does not satisfy a structural precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    /// The complete-data variant saw a missing annotation.
    #[error("TCLS requires complete annotations ({0})")]
    MissingAnnotation(String),

    #[error("prediction batch from {0} is not calibrated")]
    Uncalibrated(&'static str),

    #[error("non-finite loss at epoch {epoch}: {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Read and write failures inside the csv layer surface as [`Error::Io`].
    pub(crate) fn csv(path: impl AsRef<std::path::Path>, source: csv::Error) -> Self {
        if source.is_io_error() {
            if let csv::ErrorKind::Io(e) = source.into_kind() {
                return Error::io(path, e);
            }
            unreachable!("is_io_error implies an Io kind");
        }
        Error::Csv { path: path.as_ref().display().to_string(), source }
    }

    /// True for errors caused by bad input rather than a failure during a run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Shape(_)
                | Error::Empty(_)
                | Error::MissingAnnotation(_)
                | Error::Config(_)
                | Error::Csv { .. }
                | Error::Json(_)
        )
    }
}
