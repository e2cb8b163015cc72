use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient history: lag {lag} needs more than {len} observations")]
    InsufficientHistory { lag: usize, len: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("model not trained")]
    ModelNotTrained,
    #[error("singular innovation covariance at step {step}")]
    SingularInnovation { step: usize },
    #[error("singular covariance: {0}")]
    SingularCovariance(String),
    #[error("degenerate window starting at step {start}")]
    DegenerateWindow { start: usize },
    #[error("invalid start: objective or gradient not finite at x0")]
    InvalidStart,
    #[error("config error: {0}")]
    Config(String),
    #[error("divergence: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("schema error: missing column `{column}`")]
    Schema { column: String },
    #[error("value error at row {row}: {message}")]
    Value { row: u64, message: String },
    #[error("no overlapping range between sources")]
    NoOverlap,
    #[error("missing data in bucket starting at {bucket_start} ({source_name} source)")]
    MissingBucket { bucket_start: i64, source_name: &'static str },
    #[error("invalid price at index {index}: {value}")]
    InvalidPrice { index: usize, value: f64 },
    #[error("degenerate column `{0}`: zero variance")]
    DegenerateColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InsufficientHistory { .. } => "insufficient_history",
            Error::InvalidData(_) => "invalid_data",
            Error::Shape(_) => "shape",
            Error::ModelNotTrained => "model_not_trained",
            Error::SingularInnovation { .. } => "singular_innovation",
            Error::SingularCovariance(_) => "singular_covariance",
            Error::DegenerateWindow { .. } => "degenerate_window",
            Error::InvalidStart => "invalid_start",
            Error::Config(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::Schema { .. } => "schema",
            Error::Value { .. } => "value",
            Error::NoOverlap => "no_overlap",
            Error::MissingBucket { .. } => "missing_bucket",
            Error::InvalidPrice { .. } => "invalid_price",
            Error::DegenerateColumn(_) => "degenerate_column",
            Error::UnknownColumn(_) => "unknown_column",
            Error::Format(_) => "format",
            Error::AtStep { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep { step, source: Box::new(e) },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
