//! Model configuration and its `key=value` text form.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::amtl::DEFAULT_AML_HIDDEN;
use crate::error::{Error, Result};

/// How a field's embedding dimension is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    /// Fixed full dimension for every value.
    Fbe,
    /// Rule-based: frequency blocks with halving dimensions.
    Mde,
    /// Twins selection layer with straight-through training.
    Amtl,
    /// Single selection branch (high-frequency branch only).
    Aml,
    /// Twins selection layer trained on the relaxed selection.
    AmtlNste,
}

impl Policy {
    pub const ALL: [Policy; 5] = [Policy::Fbe, Policy::Mde, Policy::Amtl, Policy::Aml, Policy::AmtlNste];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Fbe => "fbe",
            Policy::Mde => "mde",
            Policy::Amtl => "amtl",
            Policy::Aml => "aml",
            Policy::AmtlNste => "amtl-nste",
        }
    }

    /// Whether the field carries a learned selection layer.
    pub fn is_adaptive(self) -> bool {
        matches!(self, Policy::Amtl | Policy::Aml | Policy::AmtlNste)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("amtl_nste") && *p == Policy::AmtlNste))
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldConfig {
    pub name: String,
    pub vocab_size: usize,
    pub dim: usize,
    pub policy: Policy,
}

impl FieldConfig {
    pub fn new(name: impl Into<String>, vocab_size: usize, dim: usize, policy: Policy) -> Self {
        Self { name: name.into(), vocab_size, dim, policy }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub fields: Vec<FieldConfig>,
    pub head_hidden: Vec<usize>,
    pub aml_hidden: Vec<usize>,
    pub lr: f64,
    /// Multiplier on `lr` for the selection layers.
    pub amtl_lr_scale: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub seed: u64,
    pub mde_blocks: usize,
    pub mde_base_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            fields: Vec::new(),
            head_hidden: vec![64, 32],
            aml_hidden: vec![DEFAULT_AML_HIDDEN],
            lr: 0.1,
            amtl_lr_scale: 1.0,
            epochs: 3,
            batch_size: 256,
            temperature: 0.2,
            seed: 0,
            mde_blocks: 4,
            mde_base_dim: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

fn join(list: &[usize]) -> String {
    list.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::Config("at least one field is required".into()));
        }
        for (i, f) in self.fields.iter().enumerate() {
            if f.dim == 0 {
                return Err(Error::Config(format!("field `{}` has dimension 0", f.name)));
            }
            if f.vocab_size == 0 {
                return Err(Error::Config(format!("field `{}` has an empty vocabulary", f.name)));
            }
            if f.name.is_empty() || f.name.contains(|c: char| c == ':' || c == ',' || c == '=' || c.is_whitespace()) {
                return Err(Error::Config(format!("invalid field name `{}`", f.name)));
            }
            if self.fields[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::Config(format!("duplicate field `{}`", f.name)));
            }
            if f.policy == Policy::Mde && self.mde_blocks > 0 && self.mde_base_dim << (self.mde_blocks - 1) > f.dim {
                return Err(Error::Config(format!(
                    "field `{}`: mde_base_dim * 2^(mde_blocks-1) exceeds dimension {}",
                    f.name, f.dim
                )));
            }
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config("lr must be a non-negative finite real".into()));
        }
        if !(self.amtl_lr_scale >= 0.0) || !self.amtl_lr_scale.is_finite() {
            return Err(Error::Config("amtl_lr_scale must be a non-negative finite real".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.mde_blocks == 0 || self.mde_base_dim == 0 {
            return Err(Error::Config("mde_blocks and mde_base_dim must be positive".into()));
        }
        if self.head_hidden.contains(&0) || self.aml_hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn field(&self, name: &str) -> Option<&FieldConfig> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Sets every field's policy.
    pub fn set_policy(&mut self, policy: Policy) {
        self.fields.iter_mut().for_each(|f| f.policy = policy);
    }

    /// Sets every field's dimension.
    pub fn set_dim(&mut self, dim: usize) {
        self.fields.iter_mut().for_each(|f| f.dim = dim);
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "fields" => {
                self.fields = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|spec| {
                        let parts: Vec<&str> = spec.trim().split(':').collect();
                        match parts.as_slice() {
                            [name, vocab, dim, policy] => Ok(FieldConfig::new(
                                *name,
                                parse(key, vocab)?,
                                parse(key, dim)?,
                                policy.parse()?,
                            )),
                            _ => Err(Error::Config(format!("field spec `{spec}` is not name:vocab:dim:policy"))),
                        }
                    })
                    .collect::<Result<_>>()?;
            }
            "policy" => self.set_policy(value.trim().parse()?),
            "dim" => self.set_dim(parse(key, value)?),
            "head_hidden" => self.head_hidden = parse_list(key, value)?,
            "aml_hidden" => self.aml_hidden = parse_list(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "amtl_lr_scale" => self.amtl_lr_scale = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mde_blocks" => self.mde_blocks = parse(key, value)?,
            "mde_base_dim" => self.mde_base_dim = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines on top of `self`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let fields = self
            .fields
            .iter()
            .map(|f| format!("{}:{}:{}:{}", f.name, f.vocab_size, f.dim, f.policy))
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "fields={fields}\nhead_hidden={}\naml_hidden={}\nlr={}\namtl_lr_scale={}\nepochs={}\nbatch_size={}\ntemperature={}\nseed={}\nmde_blocks={}\nmde_base_dim={}\n",
            join(&self.head_hidden),
            join(&self.aml_hidden),
            self.lr,
            self.amtl_lr_scale,
            self.epochs,
            self.batch_size,
            self.temperature,
            self.seed,
            self.mde_blocks,
            self.mde_base_dim,
        )
    }
}
