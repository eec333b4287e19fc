use thiserror::Error;

use crate::distribution::AssumptionReport;
use crate::solver::Discard;

pub type Result<T, E = TppError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TppError {
    #[error("distribution is empty")]
    EmptyDistribution,

    #[error("probability at index {index} is negative ({value})")]
    NegativeProbability { index: usize, value: f64 },

    #[error("probability at index {index} is not finite")]
    NonFiniteProbability { index: usize },

    #[error("distribution has zero total mass")]
    ZeroMass,

    #[error("probabilities sum to {sum}, expected 1 (enable normalization to rescale)")]
    Unnormalized { sum: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid height vector: {0}")]
    InvalidHeights(String),

    #[error("expected {expected} entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("leaf index {leaf} is out of range for a tree with {leaves} leaves")]
    LeafOutOfRange { leaf: usize, leaves: usize },

    #[error("height vector has no leaf at depth {depth}")]
    NoLeafAtDepth { depth: u32 },

    #[error("need {needed} small items, only {available} available")]
    InsufficientSmallItems { needed: usize, available: usize },

    #[error("token {token} is not a small item")]
    NotSmall { token: usize },

    #[error("leaf {leaf} is empty")]
    EmptyLeaf { leaf: usize },

    #[error("instance violates assumption {id}: {report}")]
    AssumptionFailed { id: u8, report: AssumptionReport },

    #[error("no candidate tree was accepted ({} discarded)", discards.len())]
    NoCandidate { discards: Vec<Discard> },

    #[error("resource limit exceeded at epsilon={epsilon} for heights {heights:?}: {detail}")]
    ResourceLimit {
        epsilon: f64,
        heights: Vec<u32>,
        detail: String,
    },

    #[error("guard violated: {0}")]
    Guard(String),

    #[error("token {token} is not in the codec's support")]
    UnknownToken { token: usize },

    #[error("stream holds {available} bits but {declared} are required")]
    TruncatedStream { declared: usize, available: usize },

    #[error("invalid hex payload: {0}")]
    Hex(#[from] hex::FromHexError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
