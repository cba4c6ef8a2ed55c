use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("backward called without a cached forward pass")]
    NoForwardCache,
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidConfig { key: &'static str, reason: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("contrastive loss needs at least two samples per batch, got {0}")]
    NoNegatives(usize),
    #[error("sample ids do not pair: {0}")]
    Pairing(String),
    #[error("modality unavailable: {0}")]
    Modality(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("infeasible partition: {0}")]
    Infeasible(String),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn config(key: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key,
            reason: reason.into(),
        }
    }
}
