use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{what}: expected length {expected}, got {actual}")]
    Shape { what: &'static str, expected: usize, actual: usize },

    #[error("{what} at index {index} is not finite")]
    NonFinite { what: &'static str, index: usize },

    #[error("{what} {index} out of range for length {len}")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },

    #[error("{what} is empty")]
    Empty { what: &'static str },

    #[error("invalid parameter: {0}")]
    Parameter(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("field `{field}`: feature value {id} is outside the vocabulary of size {vocab_size}")]
    OutOfVocabulary { field: String, id: u64, vocab_size: usize },

    #[error("unknown field `{0}`")]
    UnknownField(String),

    #[error("contract violation: {0}")]
    Contract(&'static str),

    #[error("non-finite loss at example {index} (p = {p}, label = {label})")]
    NonFiniteLoss { index: usize, p: f64, label: u8 },

    #[error("checkpoint has no section `{0}`")]
    MissingSection(String),

    #[error("checkpoint section `{name}` has shape {actual:?}, expected {expected:?}")]
    SectionShape { name: String, expected: Vec<u64>, actual: Vec<u64> },
}
