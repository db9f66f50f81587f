use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{stage} diverged at step {step}")]
    Divergence { stage: &'static str, step: usize },

    #[error("degenerate data: column {column} has zero variance")]
    DegenerateData { column: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("every fit in the sweep failed: {}", format_failures(.0))]
    SweepFailed(Vec<(f64, String)>),

    #[error("{failed} of {total} replicates failed, above the abort threshold")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

fn format_failures(items: &[(f64, String)]) -> String {
    items
        .iter()
        .map(|(lambda, msg)| format!("lambda={lambda:e}: {msg}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    /// Short machine-readable tag used in the CLI's JSON error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Divergence { .. } => "divergence",
            Error::DegenerateData { .. } => "degenerate_data",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Resource(_) => "resource",
            Error::SweepFailed(_) => "sweep_failed",
            Error::TooManyFailures { .. } => "too_many_failures",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Toml(_) => "config_parse",
        }
    }
}
