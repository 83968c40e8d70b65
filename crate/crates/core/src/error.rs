use thiserror::Error;

/// Errors surfaced by the filter, objectives, solver and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite state at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("ill-conditioned {what}: condition number {cond:.3e} exceeds {limit:.1e}")]
    IllConditioned { what: String, cond: f64, limit: f64 },

    #[error("interval {interval}: {source}")]
    Interval {
        interval: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("singular information matrix at interval {interval}")]
    SingularInformation { interval: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_interval(self, interval: usize) -> Self {
        match self {
            e @ Error::Interval { .. } => e,
            e => Error::Interval { interval, source: Box::new(e) },
        }
    }

    /// Short machine-readable tag used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::NonFinite { .. } => "non_finite",
            Error::IllConditioned { .. } => "ill_conditioned",
            Error::Interval { source, .. } => source.kind(),
            Error::Unsupported(_) => "unsupported",
            Error::SingularInformation { .. } => "singular_information",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
