use thiserror::Error;

/// Errors raised across the crate. Each variant maps to a stable kebab-case
/// name (see [`Error::name`]) which the CLI prints on failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("fewer than 2 masked-in cells ({0} present)")]
    FewerThanTwoMaskedCells(usize),
    #[error("non-finite value at cell ({x}, {y})")]
    NonFiniteValue { x: usize, y: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown pattern name `{0}`")]
    UnknownPatternName(String),
    #[error("zero variance: all masked-in values are equal")]
    ZeroVariance,
    #[error("no adjacent masked-in cell pairs")]
    NoAdjacentPairs,
    #[error("invalid spec limits: lo={lo} must be below hi={hi}")]
    InvalidSpecLimits { lo: f64, hi: f64 },
    #[error("too few cells: need at least {needed}, got {got}")]
    TooFewCells { needed: usize, got: usize },
    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no valid LBP centers")]
    NoValidCenters,
    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),
    #[error("feature length mismatch: expected {expected}, got {got}")]
    FeatureLengthMismatch { expected: usize, got: usize },
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("non-monotone curve `{curve}` at index {index}")]
    NonMonotoneCurve { curve: String, index: usize },
    #[error("bound violation at tau={tau}: {detail}")]
    BoundViolation { tau: f64, detail: String },
    #[error("pattern sampler not normalized (total mass {0})")]
    UnnormalizedSampler(f64),
    #[error("invalid alpha {0}: shape parameter must exceed 1")]
    InvalidAlpha(f64),
    #[error("degenerate groups: {0}")]
    DegenerateGroups(String),
    #[error("empty tau grid")]
    EmptyTauGrid,
}

impl Error {
    /// Stable machine-readable error name.
    pub fn name(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::FewerThanTwoMaskedCells(_) => "fewer-than-2-masked-cells",
            Error::NonFiniteValue { .. } => "non-finite-value",
            Error::InvalidConfig(_) => "invalid-config",
            Error::Io { .. } => "io-error",
            Error::Parse(_) => "parse-error",
            Error::UnknownPatternName(_) => "unknown-pattern-name",
            Error::ZeroVariance => "zero-variance",
            Error::NoAdjacentPairs => "no-adjacent-pairs",
            Error::InvalidSpecLimits { .. } => "invalid-spec-limits",
            Error::TooFewCells { .. } => "too-few-cells",
            Error::TooFewPoints { .. } => "too-few-points",
            Error::NoValidCenters => "no-valid-centers",
            Error::DegenerateTrainingSet(_) => "degenerate-training-set",
            Error::FeatureLengthMismatch { .. } => "feature-length-mismatch",
            Error::OutOfRange(_) => "out-of-range",
            Error::NonMonotoneCurve { .. } => "non-monotone-curve",
            Error::BoundViolation { .. } => "bound-violation",
            Error::UnnormalizedSampler(_) => "unnormalized-sampler",
            Error::InvalidAlpha(_) => "invalid-alpha",
            Error::DegenerateGroups(_) => "degenerate-groups",
            Error::EmptyTauGrid => "empty-tau-grid",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
