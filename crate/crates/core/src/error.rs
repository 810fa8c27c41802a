use thiserror::Error;

use crate::moduli::ModulusKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("step size lambda_{index} = {value} of schedule `{schedule}` is outside [0, 1]")]
    ScheduleDomain {
        schedule: String,
        index: u64,
        value: f64,
    },

    #[error("schedule `{schedule}` has no {modulus} attached")]
    MissingModulus {
        schedule: String,
        modulus: &'static str,
    },

    #[error("expected a {expected} modulus, got a {found} modulus")]
    ModulusKind {
        expected: ModulusKind,
        found: ModulusKind,
    },

    #[error("invalid modulus rule: {0}")]
    InvalidModulus(String),

    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: String,
        domain: &'static str,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Shape { expected: usize, found: usize },

    #[error("non-finite value at step {step}")]
    NumericBlowup { step: u64 },

    #[error("bound exceeds the representable size ({0})")]
    BoundTooLarge(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
