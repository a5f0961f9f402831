use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("qubit index {index} out of range for {n_qubits}-qubit register")]
    QubitOutOfRange { index: usize, n_qubits: usize },

    #[error("duplicate target qubit {0}")]
    DuplicateTarget(usize),

    #[error("matrix is not unitary (max |U†U - I| = {0:e})")]
    NotUnitary(f64),

    #[error("invalid probability {0} (must lie in [0, 1])")]
    InvalidProbability(f64),

    #[error("state is not normalized (norm² = {0})")]
    Unnormalized(f64),

    #[error("invalid Pauli label {0:?}")]
    InvalidPauli(String),

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("jacobian has rank {rank} but {params} parameters must be resolved")]
    RankDeficient { rank: usize, params: usize },

    #[error("estimator requires n >= {min}, got {n}")]
    EstimatorDomain { n: u32, min: u32 },

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("invalid configuration at `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
