use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A parameter violates its domain. `field` names the offending field
    /// (a JSON pointer when the value came from a declaration file).
    #[error("{field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("unsupported composition: {0}")]
    UnsupportedComposition(String),

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    /// Exhaustive enumeration stopped at the guard.
    #[error("enumeration limit {limit} exceeded after {reached} words")]
    LimitExceeded { limit: usize, reached: usize },

    #[error("storing the cutset words would take more than {budget} digits; use a larger b or count instead")]
    StorageExceeded { budget: usize },

    #[error("layer {layer}: {reason}")]
    ProviderCapability { layer: usize, reason: String },

    #[error("layer {layer}, map {map}: image of the ambient box is not contained in it")]
    AmbientViolation { layer: usize, map: usize },

    #[error("contraction guard tripped: {0}")]
    ContractionGuard(String),

    #[error("layer {layer} is not a similarity layer")]
    NotSimilarity { layer: usize },

    #[error("invalid word: {0}")]
    InvalidWord(String),

    #[error("numeric guard `{guard}` tripped: {detail}")]
    NumericGuard { guard: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field: field.into(),
        reason: reason.into(),
    }
}
