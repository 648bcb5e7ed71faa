use alloc::string::String;
use alloc::vec::Vec;

use crate::space::Violation;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpaceError {
    #[error("invalid space: {} violation(s)", .0.len())]
    Invalid(Vec<Violation>),
    #[error("grid too large: {cardinality} configurations")]
    GridTooLarge { cardinality: u128 },
    #[error("non-finite value")]
    NonFinite,
    #[error("non-finite value for `{param}`")]
    NonFiniteValue { param: String },
    #[error("space mismatch: expected `{expected}`, found `{found}`")]
    SpaceMismatch { expected: String, found: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("active parameter `{0}` missing")]
    MissingParam(String),
    #[error("inactive parameter `{0}` present")]
    InactiveParam(String),
    #[error("value of `{0}` outside its domain")]
    OutOfDomain(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplerError {
    #[error("space mismatch: history holds configurations of `{found}`, sampling `{expected}`")]
    SpaceMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PrunerError {
    #[error("no report at step {0}")]
    NoReport(u32),
    #[error("invalid hyperband schedule: {0}")]
    InvalidSchedule(&'static str),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MilError {
    #[error("undefined AUC: labels contain a single class")]
    UndefinedAuc,
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite loss at epoch {epoch} (lr={lr:e})")]
    NonFiniteLoss { epoch: u32, lr: f64 },
    #[error("unknown value `{value}` for `{param}`")]
    UnknownKnob { param: String, value: String },
    #[error("missing pipeline parameter `{0}`")]
    MissingKnob(String),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(&'static str),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("malformed filter near `{0}`")]
    MalformedFilter(String),
    #[error("column `{0}` is not numeric")]
    NotNumeric(String),
    #[error("unknown aggregate `{0}`")]
    UnknownAggregate(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum JournalError {
    #[error("illegal transition for trial {id}: {from:?} -> {to:?}")]
    IllegalTransition {
        id: u64,
        from: crate::trial::TrialState,
        to: crate::trial::TrialState,
    },
    #[error("event references unknown trial {0}")]
    UnknownTrial(u64),
    #[error("duplicate trial id {0}")]
    DuplicateTrial(u64),
    #[error("sequence number {found} does not follow {previous}")]
    NonMonotoneSequence { previous: u64, found: u64 },
    #[error("non-increasing step {step} for trial {id}")]
    NonMonotoneStep { id: u64, step: u32 },
    #[error("final value present iff state is complete (trial {0})")]
    FinalValueMismatch(u64),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpeedupError {
    #[error("speedup domain error: {0}")]
    Domain(&'static str),
}
