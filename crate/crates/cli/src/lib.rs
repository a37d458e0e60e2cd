//! File formats, synthetic data and command implementations for `amtl-core`.

pub mod codec;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod report;
pub mod synth;

pub use error::{CliError, FormatError, Result};
