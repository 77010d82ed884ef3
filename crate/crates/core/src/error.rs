use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("price must be strictly positive, got {0}")]
    NonPositivePrice(f64),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("item {item}: elasticity must be set and negative")]
    MissingElasticity { item: usize },

    #[error("item {item}: forecast must be positive, got {forecast}")]
    NonPositiveForecast { item: usize, forecast: f64 },

    #[error("item {item}: no demand history for day {day}")]
    MissingHistory { item: usize, day: u32 },

    #[error("item {item}: day {day} already recorded")]
    DuplicateDay { item: usize, day: u32 },

    #[error("item {item}: demand must be non-negative and finite, got {demand}")]
    InvalidDemand { item: usize, demand: f64 },

    #[error("unknown item {0}")]
    UnknownItem(usize),

    #[error("insufficient data: need at least {needed} rows, have {have}")]
    InsufficientData { needed: usize, have: usize },

    #[error("elasticity is inestimable: design has zero variance")]
    Inestimable,

    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    #[error("empty basket")]
    EmptyBasket,

    #[error("rejection sampling exceeded {attempts} attempts without an all-negative draw")]
    RejectionLimit { attempts: usize },

    #[error("covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("observed revenue must be finite, got {0}")]
    NonFiniteRevenue(f64),

    #[error("degenerate sample: standard deviation is zero")]
    DegenerateSample,

    #[error("no items satisfy the eligibility filter (k = {k})")]
    EmptyEligibleSet { k: usize },

    #[error("mismatched trial structure: {0}")]
    TrialStructure(String),

    #[error("trial {trial}, day {day}: {source}")]
    Trial {
        trial: usize,
        day: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
