use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    /// A raster or tensor had an unusable size.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A numeric parameter was outside its valid domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Points were collinear, coincident or otherwise unusable.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// No face in the pool satisfied the identity and landmark constraints.
    #[error("no compatible source face for target {0}")]
    NoSource(String),

    /// Tensor shapes did not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A NaN or infinity appeared in a forward value or gradient.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A metric is undefined for the given labels (e.g. a single class).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Input data violated a contract (mixed labels, missing masks, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line front end:
    /// 1 for config/data problems, 2 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}
