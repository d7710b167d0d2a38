//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by dataset construction, training, ranking, aggregation,
/// and the communication ledger.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid learner spec: {0}")]
    InvalidSpec(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid partition plan: {0}")]
    InvalidPlan(String),

    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty test set")]
    EmptyTestSet,

    #[error("robot {0} has an empty dataset")]
    EmptyDataset(u64),

    #[error("model parameters contain a non-finite value at index {0}")]
    NonFinite(usize),

    #[error("csv: {0}")]
    CsvFormat(String),

    #[error("csv row {row}, column {column}: {reason}")]
    CsvCell {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("no robots have any data")]
    AllRobotsEmpty,

    #[error("top-level count {j} exceeds fleet size {n}")]
    TopCountExceedsFleet { j: usize, n: usize },

    #[error("invalid tier assignment: {0}")]
    InvalidAssignment(String),

    #[error("nothing to aggregate")]
    EmptyAggregation,

    #[error("total aggregation weight is zero")]
    ZeroTotalWeight,

    #[error("negative or non-finite aggregation weight {0}")]
    InvalidWeight(f64),

    #[error("robot with weight {weight} reports zero local steps")]
    ZeroSteps { weight: f64 },

    #[error("round {0} has no recorded messages")]
    UnknownRound(u64),

    #[error("inconsistent comparison arms: {0}")]
    InconsistentArms(String),
}

pub type Result<T> = std::result::Result<T, Error>;
