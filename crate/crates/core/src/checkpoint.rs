//! In-memory checkpoint: the model config plus named, shaped parameter
//! sections. The byte encoding lives in the companion IO crate.

use alloc::string::String;
use alloc::vec::Vec;

use crate::config::ModelConfig;

/// Name of the section carrying the text-encoded config.
pub const CONFIG_SECTION: &str = "config";

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSection {
    pub name: String,
    pub shape: Vec<u64>,
    pub values: Vec<f64>,
}

impl ParamSection {
    pub fn new(name: String, shape: Vec<u64>, values: Vec<f64>) -> Self {
        Self { name, shape, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub sections: Vec<ParamSection>,
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Option<&ParamSection> {
        self.sections.iter().find(|s| s.name == name)
    }
}

/// Parameter groups that a warm start copies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WarmParts {
    pub embeddings: bool,
    pub head: bool,
    pub amtl: bool,
}

impl WarmParts {
    pub const NONE: WarmParts = WarmParts { embeddings: false, head: false, amtl: false };
    pub const ALL: WarmParts = WarmParts { embeddings: true, head: true, amtl: true };

    /// Parses a comma list of `emb`/`embeddings`, `head`, `amtl`.
    pub fn parse(list: &str) -> Option<Self> {
        let mut parts = Self::NONE;
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "emb" | "embedding" | "embeddings" => parts.embeddings = true,
                "head" => parts.head = true,
                "amtl" => parts.amtl = true,
                _ => return None,
            }
        }
        Some(parts)
    }

    /// Whether the section called `name` belongs to a requested group.
    pub fn includes(&self, name: &str) -> bool {
        if name.starts_with("head.") {
            self.head
        } else if name.contains(".amtl.") {
            self.amtl
        } else if name.ends_with(".embedding") {
            self.embeddings
        } else {
            false
        }
    }
}
