//! Zero-drop compressed embedding store.
//!
//! A prefix-masked row is all zeros after index `k`, so only its first
//! `k+1` values are kept; fetching re-pads the suffix with zeros.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::DenseVector;

/// Kept prefix of one row.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRow {
    pub k: u16,
    pub values: Vec<f64>,
}

/// Rows keyed by id, kept sorted for deterministic iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedStore {
    field_name: String,
    dim: usize,
    rows: BTreeMap<u64, StoredRow>,
}

impl CompressedStore {
    /// Empty store for `dim`-wide rows.
    pub fn new(field_name: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 || dim > u16::MAX as usize + 1 {
            return Err(Error::Parameter("store dimension must be in 1..=65536"));
        }
        Ok(Self { field_name: field_name.into(), dim, rows: BTreeMap::new() })
    }

    /// Inserts a row; `values` must hold exactly `k + 1` finite entries.
    pub fn insert(&mut self, id: u64, k: u16, values: Vec<f64>) -> Result<()> {
        if k as usize >= self.dim {
            return Err(Error::IndexOutOfRange { what: "selected index", index: k as usize, len: self.dim });
        }
        if values.len() != k as usize + 1 {
            return Err(Error::Shape { what: "stored row", expected: k as usize + 1, actual: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "stored value", index: i });
        }
        self.rows.insert(id, StoredRow { k, values });
        Ok(())
    }

    pub fn field_name(&self) -> &str {
        &self.field_name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (u64, &StoredRow)> {
        self.rows.iter().map(|(id, r)| (*id, r))
    }

    /// Stored values followed by `D-1-k` zeros.
    pub fn fetch(&self, id: u64) -> Result<DenseVector> {
        let row = self.rows.get(&id).ok_or(Error::IndexOutOfRange {
            what: "stored id",
            index: id as usize,
            len: self.rows.len(),
        })?;
        let mut out = Vec::with_capacity(self.dim);
        out.extend_from_slice(&row.values);
        out.resize(self.dim, 0.0);
        Ok(DenseVector::from_vec(out))
    }

    /// Number of stored reals, `Σ (k_i + 1)`.
    pub fn value_words(&self) -> usize {
        self.rows.values().map(|r| r.values.len()).sum()
    }

    /// Mean kept dimension `mean(k_i + 1)`.
    pub fn avg_dim(&self) -> Result<f64> {
        if self.rows.is_empty() {
            return Err(Error::Empty { what: "compressed store" });
        }
        Ok(self.value_words() as f64 / self.rows.len() as f64)
    }

    /// `avg_dim / D`.
    pub fn memory_ratio(&self) -> Result<f64> {
        Ok(self.avg_dim()? / self.dim as f64)
    }
}

/// Keeps the first `k_i + 1` entries of every row. `selections` maps each
/// id of the table to its selected index.
pub fn compress(table: &EmbeddingTable, selections: &BTreeMap<usize, usize>) -> Result<CompressedStore> {
    let mut store = CompressedStore::new(table.field_name(), table.dim())?;
    for id in 0..table.vocab_size() {
        let k = *selections.get(&id).ok_or(Error::IndexOutOfRange {
            what: "id without a selection",
            index: id,
            len: selections.len(),
        })?;
        if k >= table.dim() {
            return Err(Error::IndexOutOfRange { what: "selected index", index: k, len: table.dim() });
        }
        store.insert(id as u64, k as u16, table.row(id)?[..=k].to_vec())?;
    }
    Ok(store)
}
