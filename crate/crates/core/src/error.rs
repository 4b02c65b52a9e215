use std::io;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("zero vector where a nonzero vector is required ({0})")]
    ZeroVector(&'static str),

    #[error("degenerate tangent plane: spanning vectors are (numerically) collinear")]
    DegeneratePlane,

    #[error("invalid probabilities p1={p1}, p2={p2}: {reason}")]
    InvalidProbability { p1: f64, p2: f64, reason: &'static str },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("recomputed charge mode requires an unembedding matrix")]
    RecomputedWithoutUnembed,

    #[error("top-two tokens changed: expected {{{}, {}}}, found {{{}, {}}}", expected.0, expected.1, found.0, found.1)]
    TopTwoChanged { expected: (u32, u32), found: (u32, u32) },

    #[error("empty set: {0}")]
    EmptySet(&'static str),

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("too many items for exact enumeration: {got} > {max}")]
    TooManyItems { max: usize, got: usize },

    #[error("input has no variation ({0})")]
    ConstantInput(&'static str),

    #[error("no records carry evaluation metadata")]
    NoEvalData,

    #[error("target is antipodal to the base point; rotation plane undefined")]
    AntipodalTarget,

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("invalid probe label `{0}`")]
    InvalidProbeLabel(String),

    #[error("invalid probe {index}: {reason}")]
    InvalidProbe { index: usize, reason: String },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("trailing bytes after last record: {0} bytes")]
    TrailingBytes(u64),

    #[error("value out of range in record {record_id}: {reason}")]
    ValueOutOfRange { record_id: u64, reason: String },

    #[error("probability ordering violated in record {record_id}: p1={p1}, p2={p2}")]
    ProbabilityOrdering { record_id: u64, p1: f32, p2: f32 },

    #[error("invalid record {record_id}: {reason}")]
    InvalidRecord { record_id: u64, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error means the input file is not a conforming dataset.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidProbeLabel(_)
                | Error::InvalidProbe { .. }
                | Error::MalformedHeader(_)
                | Error::Truncated(_)
                | Error::TrailingBytes(_)
                | Error::ValueOutOfRange { .. }
                | Error::ProbabilityOrdering { .. }
                | Error::InvalidRecord { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
