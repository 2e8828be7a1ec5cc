use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operator is not Hermitian (max |A_ij - conj(A_ji)| = {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },

    #[error("eigensolver failed to converge (dim {dim}, Frobenius norm {norm:e})")]
    NoConvergence { dim: usize, norm: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("world dimension {requested} exceeds the configured limit {limit}")]
    ResourceLimit { requested: usize, limit: usize },

    #[error(
        "expectation value has imaginary residue {residue:e}; operator is probably not Hermitian"
    )]
    ImaginaryResidue { residue: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range (valid: {valid})")]
    IndexOutOfRange { index: usize, valid: String },

    #[error("superposition has zero norm")]
    ZeroNorm,

    #[error("scenario `{scenario}` failed at time index {index}: {source}")]
    Scenario {
        scenario: String,
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("scenario `{scenario}`, case `{case}`: {source}")]
    Case {
        scenario: String,
        case: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

impl Error {
    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::InvalidParameter(_)
            | Error::ResourceLimit { .. }
            | Error::IndexOutOfRange { .. }
            | Error::DimensionMismatch { .. }
            | Error::ConfigParse(_) => true,
            Error::Scenario { source, .. } | Error::Case { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
