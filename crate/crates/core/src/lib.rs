//! Adaptive embedding-dimension selection for CTR models.
//!
//! Each feature value gets a learned prefix mask over its embedding. A
//! twins pair of small MLPs reads the value's frequency features and picks
//! how many leading dimensions to keep. Masked rows keep their full width
//! (zero padded), so downstream layers are unchanged. At rest the zero
//! suffix is dropped ([`storage`]).
//!
//! The crate is `no_std` and needs only `alloc`; file formats, the dataset
//! generator and the command line live in the companion `amtl-cli` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod amtl;
pub mod checkpoint;
pub mod config;
pub mod embedding;
mod error;
pub mod eval;
pub mod freq;
pub mod linalg;
pub mod mlp;
pub mod model;
pub mod storage;

pub use amtl::{AmlParams, AmtlParams, SelectionMode, SelectionResult};
pub use checkpoint::{Checkpoint, ParamSection, WarmParts};
pub use config::{FieldConfig, ModelConfig, Policy};
pub use embedding::EmbeddingTable;
pub use error::{Error, Result};
pub use eval::{DimProfile, ScoredSet};
pub use freq::{FieldVocab, FrequencyStats};
pub use linalg::{Activation, DenseMatrix, DenseVector};
pub use model::{Clock, CtrModel, EpochSummary, GradientPath, NoClock, TrainingExample};
pub use storage::CompressedStore;
