use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown initialization scheme `{0}`")]
    UnknownInitScheme(String),

    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),

    #[error("control weight must be symmetric positive definite, got {0}")]
    ControlWeightNotPositive(f64),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("cannot sample from an empty {0} subset")]
    EmptySubset(&'static str),

    #[error("non-finite gradient entry at parameter index {index}")]
    NonFiniteGradient { index: usize },

    /// Carries the per-epoch loss history recorded before the failure.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged {
        epoch: usize,
        detail: String,
        history: Vec<f64>,
    },

    #[error("integrator exceeded {max_steps} steps at t = {t}")]
    MaxSteps { max_steps: usize, t: f64 },

    #[error("integrator step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("outlier statistics need at least 2 members, got {0}")]
    TooFewMembers(usize),

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("weight file mismatch: {0}")]
    WeightFormat(String),

    #[error("missing input file {}", .0.display())]
    MissingInput(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::UnknownInitScheme(_) => "unknown_init_scheme",
            Error::UnknownPolicy(_) => "unknown_policy",
            Error::ControlWeightNotPositive(_) => "control_weight",
            Error::InvalidDomain(_) => "invalid_domain",
            Error::EmptySubset(_) => "empty_subset",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::Diverged { .. } => "diverged",
            Error::MaxSteps { .. } => "max_steps",
            Error::StepUnderflow { .. } => "step_underflow",
            Error::TooFewMembers(_) => "too_few_members",
            Error::EmptyEnsemble => "empty_ensemble",
            Error::WeightFormat(_) => "weight_format",
            Error::MissingInput(_) => "missing_input",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Toml(_) => "config_parse",
        }
    }
}
