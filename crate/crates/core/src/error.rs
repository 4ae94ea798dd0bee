use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid window ({x0}, {y0}, {x1}, {y1})")]
    InvalidWindow { x0: f64, y0: f64, x1: f64, y1: f64 },

    #[error("margin {0} outside [0, 0.5)")]
    InvalidMargin(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("feature vector must be non-empty")]
    EmptyFeature,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("channel mode {0} needs a background descriptor")]
    MissingBackground(&'static str),

    #[error("ground-truth list is empty for {0}")]
    EmptyGroundTruth(String),

    #[error("training needs at least one {0} example")]
    EmptyClass(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cannot split {items} positives into {folds} folds")]
    TooManyFolds { folds: usize, items: usize },

    #[error("dataset has no {0} bags")]
    MissingBags(&'static str),

    #[error("ground truth of weakly supervised images was read {0} times during training")]
    GroundTruthLeak(usize),

    #[error("negative cache may not hold windows of weakly labelled positive image {0}")]
    PositiveInCache(String),

    #[error("not enough windows for the inner-product diagnostic: {0}")]
    TooFewWindows(usize),

    #[error("malformed dataset: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by NaN or infinite values surfacing in numerics.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
