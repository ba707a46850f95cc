use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot take the direction of a zero vector")]
    ZeroVector,

    #[error("feature count mismatch: expected {expected}, got {got}")]
    FeatureMismatch { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("bad magic number in signal file")]
    BadMagic,

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("dimension overflow: {features} x {n_theta} x {n_phi} values do not fit the format")]
    DimensionOverflow {
        features: u32,
        n_theta: u32,
        n_phi: u32,
    },

    #[error("non-finite value produced by layer {layer}")]
    NonFinite { layer: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("OFF parse error at line {line}: {message}")]
    MeshParse { line: usize, message: String },

    #[error("rescaling failed: {0}")]
    Rescale(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics themselves rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Rescale(_))
    }
}
