//! Per-field frequency statistics: appearance counts, dense frequency ranks,
//! the log-count standardization behind the twins mixing weight, and the
//! rank-based frequency groups used for analysis.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, DenseVector};

/// Number of frequency features fed to the selection layers.
pub const FREQ_FEATURES: usize = 2;

/// Frozen frequency snapshot for one feature field.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyStats {
    field_name: String,
    counts: Vec<u64>,
    ranks: Vec<u32>,
    /// ids sorted by rank, most frequent first.
    by_rank: Vec<u32>,
    mean_logcount: f64,
    std_logcount: f64,
}

impl FrequencyStats {
    /// Builds the snapshot from per-id counts (index = feature-value id).
    pub fn from_counts(field_name: impl Into<String>, counts: Vec<u64>) -> Self {
        let n = counts.len();
        let mut by_rank: Vec<u32> = (0..n as u32).collect();
        // Descending count, ascending id on ties.
        by_rank.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
        let mut ranks = vec![0u32; n];
        for (rank, &id) in by_rank.iter().enumerate() {
            ranks[id as usize] = rank as u32;
        }

        let all_equal = counts.windows(2).all(|w| w[0] == w[1]);
        let (mean_logcount, std_logcount) = if n == 0 {
            (0.0, 0.0)
        } else {
            let logs: Vec<f64> = counts.iter().map(|&q| log_count(q)).collect();
            let mean = logs.iter().sum::<f64>() / n as f64;
            if all_equal {
                (mean, 0.0)
            } else {
                let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n as f64;
                (mean, libm::sqrt(var))
            }
        };

        Self { field_name: field_name.into(), counts, ranks, by_rank, mean_logcount, std_logcount }
    }

    pub fn field_name(&self) -> &str {
        &self.field_name
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn mean_logcount(&self) -> f64 {
        self.mean_logcount
    }

    pub fn std_logcount(&self) -> f64 {
        self.std_logcount
    }

    fn check(&self, id: usize) -> Result<()> {
        if id >= self.counts.len() {
            return Err(Error::OutOfVocabulary {
                field: self.field_name.clone(),
                id: id as u64,
                vocab_size: self.counts.len(),
            });
        }
        Ok(())
    }

    pub fn count(&self, id: usize) -> Result<u64> {
        self.check(id)?;
        Ok(self.counts[id])
    }

    /// Dense rank of `id`; 0 is the most frequent value.
    pub fn rank(&self, id: usize) -> Result<u32> {
        self.check(id)?;
        Ok(self.ranks[id])
    }

    /// ids ordered from most to least frequent.
    pub fn ids_by_rank(&self) -> &[u32] {
        &self.by_rank
    }

    /// Standardized `log(1 + q)`; zero when the standardization degenerates.
    pub fn standardized_logcount(&self, id: usize) -> Result<f64> {
        self.check(id)?;
        if self.std_logcount == 0.0 {
            return Ok(0.0);
        }
        Ok((log_count(self.counts[id]) - self.mean_logcount) / self.std_logcount)
    }

    /// Selection-layer input: `[standardized log-count, rank percentile]`.
    pub fn feature_vector(&self, id: usize) -> Result<DenseVector> {
        let z = self.standardized_logcount(id)?;
        let n = self.counts.len();
        let percentile = if n <= 1 { 0.0 } else { self.ranks[id] as f64 / (n - 1) as f64 };
        Ok(DenseVector::from_vec(vec![z, percentile]))
    }

    /// Twins mixing weight `sigmoid(norm(q))`.
    pub fn alpha(&self, id: usize) -> Result<f64> {
        Ok(sigmoid(self.standardized_logcount(id)?))
    }

    /// Partitions ids by rank into `n_groups` contiguous, near-equal buckets.
    /// Group 0 holds the least frequent ids.
    pub fn frequency_groups(&self, n_groups: usize) -> Result<Vec<Vec<u32>>> {
        let n = self.counts.len();
        if n_groups == 0 {
            return Err(Error::Parameter("number of frequency groups must be positive"));
        }
        if n < n_groups {
            return Err(Error::Parameter("vocabulary is smaller than the number of frequency groups"));
        }
        let mut groups = vec![Vec::new(); n_groups];
        for (pos, &id) in self.by_rank.iter().rev().enumerate() {
            groups[pos * n_groups / n].push(id);
        }
        Ok(groups)
    }
}

fn log_count(q: u64) -> f64 {
    libm::log1p(q as f64)
}

/// Declared field with its vocabulary size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldVocab {
    pub name: String,
    pub vocab_size: usize,
}

impl FieldVocab {
    pub fn new(name: impl Into<String>, vocab_size: usize) -> Self {
        Self { name: name.into(), vocab_size }
    }
}

/// Accumulates appearance counts for a set of declared fields.
#[derive(Debug, Clone)]
pub struct FrequencyCounter {
    fields: Vec<FieldVocab>,
    counts: Vec<Vec<u64>>,
}

impl FrequencyCounter {
    pub fn new(fields: &[FieldVocab]) -> Self {
        Self {
            counts: fields.iter().map(|f| vec![0; f.vocab_size]).collect(),
            fields: fields.to_vec(),
        }
    }

    /// Records one appearance of `id` in the field at position `field`.
    pub fn observe(&mut self, field: usize, id: u64) -> Result<()> {
        let vocab = self
            .fields
            .get(field)
            .ok_or_else(|| Error::UnknownField(field.to_string()))?;
        let slot = usize::try_from(id)
            .ok()
            .and_then(|i| self.counts[field].get_mut(i))
            .ok_or_else(|| Error::OutOfVocabulary { field: vocab.name.clone(), id, vocab_size: vocab.vocab_size })?;
        *slot += 1;
        Ok(())
    }

    /// Like [`observe`](Self::observe) but addresses the field by name.
    pub fn observe_named(&mut self, field: &str, id: u64) -> Result<()> {
        let idx = self
            .fields
            .iter()
            .position(|f| f.name == field)
            .ok_or_else(|| Error::UnknownField(field.to_string()))?;
        self.observe(idx, id)
    }

    pub fn finish(self) -> Vec<FrequencyStats> {
        self.fields
            .into_iter()
            .zip(self.counts)
            .map(|(f, c)| FrequencyStats::from_counts(f.name, c))
            .collect()
    }
}

/// Counts `(field name, id)` events and freezes the per-field statistics.
pub fn ingest<'a>(
    fields: &[FieldVocab],
    events: impl IntoIterator<Item = (&'a str, u64)>,
) -> Result<Vec<FrequencyStats>> {
    let mut counter = FrequencyCounter::new(fields);
    for (field, id) in events {
        counter.observe_named(field, id)?;
    }
    Ok(counter.finish())
}
