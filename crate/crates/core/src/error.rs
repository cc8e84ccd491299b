use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate energies: {0} and {1}")]
    DegenerateEnergies(f64, f64),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("basis captures only {captured:.3e} of the state norm (deficiency {deficiency:.3e})")]
    ProjectionDeficiency { captured: f64, deficiency: f64 },

    #[error("non-finite wavefunction at step {step}")]
    NonFinite { step: usize },

    #[error("cannot rescale an identically zero field to fluence {0}")]
    ZeroField(f64),

    #[error("J1 became non-finite at iteration {iteration} (history: {history:?})")]
    NonFiniteYield { iteration: usize, history: Vec<f64> },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Eigensolver(_)
                | Error::ProjectionDeficiency { .. }
                | Error::NonFinite { .. }
                | Error::ZeroField(_)
                | Error::NonFiniteYield { .. }
        )
    }
}
