//! Per-field embedding tables and the masked lookup that composes a table
//! with its field's selection layer.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::amtl::{apply_mask, AmtlParams, MaskForward, SelectionMode, SelectionResult};
use crate::error::{Error, Result};
use crate::freq::FrequencyStats;
use crate::linalg::{add_scaled, DenseMatrix, DenseVector};

/// Bound of the uniform initializer for embedding entries.
pub const EMBEDDING_INIT_BOUND: f64 = 0.01;

/// `|F| × D` embedding table for one field.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    field_name: String,
    weights: DenseMatrix,
}

impl EmbeddingTable {
    /// Entries drawn uniformly from `[-0.01, 0.01]`.
    pub fn init(field_name: impl Into<String>, vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let b = EMBEDDING_INIT_BOUND;
        Self {
            field_name: field_name.into(),
            weights: DenseMatrix::from_fn(vocab_size, dim, |_, _| rng.random_range(-b..=b)),
        }
    }

    pub fn from_weights(field_name: impl Into<String>, weights: DenseMatrix) -> Self {
        Self { field_name: field_name.into(), weights }
    }

    pub fn field_name(&self) -> &str {
        &self.field_name
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut DenseMatrix {
        &mut self.weights
    }

    fn check(&self, id: usize) -> Result<()> {
        if id >= self.vocab_size() {
            return Err(Error::OutOfVocabulary {
                field: self.field_name.clone(),
                id: id as u64,
                vocab_size: self.vocab_size(),
            });
        }
        Ok(())
    }

    /// Borrowed row `id`.
    pub fn row(&self, id: usize) -> Result<&[f64]> {
        self.check(id)?;
        Ok(self.weights.row(id))
    }

    /// Copy of row `id`, i.e. `Wᵀ v` for the one-hot `v` of `id`.
    pub fn lookup(&self, id: usize) -> Result<DenseVector> {
        Ok(DenseVector::from_vec(self.row(id)?.to_vec()))
    }

    /// `row ← row - lr·grad`. Non-finite gradients are rejected untouched.
    pub fn sgd_update(&mut self, id: usize, grad: &[f64], lr: f64) -> Result<()> {
        self.check(id)?;
        if grad.len() != self.dim() {
            return Err(Error::Shape { what: "embedding gradient", expected: self.dim(), actual: grad.len() });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { what: "embedding gradient", index: i });
        }
        add_scaled(self.weights.row_mut(id), grad, -lr);
        Ok(())
    }
}

/// Output of [`masked_lookup`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedLookup {
    /// Masked embedding `m ⊙ e`.
    pub embedding: DenseVector,
    pub raw: DenseVector,
    pub selection: SelectionResult,
    pub forward: MaskForward,
}

/// Frequency features → twins logits → straight-through selection → prefix
/// mask → masked row.
pub fn masked_lookup(
    table: &EmbeddingTable,
    amtl: &AmtlParams,
    stats: &FrequencyStats,
    id: usize,
) -> Result<MaskedLookup> {
    if amtl.dim() != table.dim() {
        return Err(Error::Shape { what: "selection layer output", expected: table.dim(), actual: amtl.dim() });
    }
    let raw = table.lookup(id)?;
    let features = stats.feature_vector(id)?;
    let alpha = stats.alpha(id)?;
    let forward = amtl.forward_mask(&features, alpha, SelectionMode::StraightThrough)?;
    let embedding = apply_mask(&raw, &forward.mask)?;
    Ok(MaskedLookup { embedding, raw, selection: forward.selection.clone(), forward })
}

/// Per-row gradient accumulator for one table; rows are applied in
/// ascending id order.
#[derive(Debug, Clone, Default)]
pub struct RowGradients {
    rows: BTreeMap<usize, Vec<f64>>,
}

impl RowGradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, id: usize, grad: &[f64]) {
        let row = self.rows.entry(id).or_insert_with(|| vec![0.0; grad.len()]);
        add_scaled(row, grad, 1.0);
    }

    pub fn get(&self, id: usize) -> Option<&[f64]> {
        self.rows.get(&id).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    /// Applies `scale · accumulated` as one SGD step per touched row.
    pub fn apply(&self, table: &mut EmbeddingTable, lr: f64, scale: f64) -> Result<()> {
        let mut scaled = Vec::new();
        for (&id, g) in &self.rows {
            scaled.clear();
            scaled.extend(g.iter().map(|v| v * scale));
            table.sgd_update(id, &scaled, lr)?;
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amtl::AmtlParams;
    use crate::freq::FREQ_FEATURES;
    use crate::linalg::DenseMatrix;
    use crate::mlp::Mlp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rigged_amtl(dim: usize, k: usize) -> AmtlParams {
        // Zero weights and a bias spike at k: logits are constant in the input.
        let mut high = Mlp::zeros(&[FREQ_FEATURES, 4, dim]);
        high.layers[1].bias.as_mut_slice()[k] = 5.0;
        let low = high.clone();
        AmtlParams::from_branches(high, low, 0.2).unwrap()
    }

    fn power_stats(n: usize) -> FrequencyStats {
        FrequencyStats::from_counts("f", (0..n as u64).map(|i| 1000 / (i + 1)).collect())
    }

    #[test]
    fn lookup_identity_table() {
        let t = EmbeddingTable::from_weights("f", DenseMatrix::identity(4));
        for j in 0..4 {
            assert_eq!(t.lookup(j).unwrap(), DenseVector::one_hot(4, j).unwrap());
        }
        assert!(matches!(t.lookup(4), Err(Error::OutOfVocabulary { .. })));
    }

    #[test]
    fn init_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = EmbeddingTable::init("f", 50, 8, &mut rng);
        assert!(t.weights().as_slice().iter().all(|v| v.abs() <= EMBEDDING_INIT_BOUND));
        assert!(t.weights().as_slice().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn lookup_equals_one_hot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = EmbeddingTable::init("f", 12, 5, &mut rng);
        for id in 0..12 {
            let v = DenseVector::one_hot(12, id).unwrap();
            assert_eq!(t.lookup(id).unwrap(), t.weights().transpose_mul(&v).unwrap());
        }
    }

    #[test]
    fn masked_lookup_rigged_selections() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = EmbeddingTable::init("f", 10, 6, &mut rng);
        let stats = power_stats(10);
        let full = masked_lookup(&t, &rigged_amtl(6, 5), &stats, 3).unwrap();
        assert_eq!(full.embedding, t.lookup(3).unwrap());
        let first = masked_lookup(&t, &rigged_amtl(6, 0), &stats, 3).unwrap();
        assert_eq!(first.embedding[0], t.lookup(3).unwrap()[0]);
        assert!(first.embedding[1..].iter().all(|v| *v == 0.0));
        assert!(masked_lookup(&t, &rigged_amtl(5, 0), &stats, 3).is_err());
    }

    #[test]
    fn masked_lookup_zero_suffix_for_every_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = EmbeddingTable::init("f", 100, 8, &mut rng);
        let mut ra = ChaCha8Rng::seed_from_u64(4);
        let mut rb = ChaCha8Rng::seed_from_u64(5);
        let amtl = AmtlParams::init(FREQ_FEATURES, &[16], 8, 0.2, &mut ra, &mut rb).unwrap();
        let stats = power_stats(100);
        for id in 0..100 {
            let out = masked_lookup(&t, &amtl, &stats, id).unwrap();
            let k = out.selection.k;
            assert!(out.embedding[k + 1..].iter().all(|v| *v == 0.0));
            assert_eq!(&out.embedding[..=k], &t.row(id).unwrap()[..=k]);
            // Determinism: the same value always maps to the same masked row.
            assert_eq!(masked_lookup(&t, &amtl, &stats, id).unwrap(), out);
        }
    }

    #[test]
    fn sgd_update_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut t = EmbeddingTable::init("f", 4, 3, &mut rng);
        let before = t.clone();
        t.sgd_update(2, &[0.0; 3], 0.5).unwrap();
        assert_eq!(t, before);
        let row = t.lookup(1).unwrap();
        t.sgd_update(1, &row, 1.0).unwrap();
        assert!(t.row(1).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(t.row(0).unwrap(), before.row(0).unwrap());
        assert_eq!(t.row(2).unwrap(), before.row(2).unwrap());
        assert!(matches!(t.sgd_update(0, &[f64::NAN, 0.0, 0.0], 0.1), Err(Error::NonFinite { .. })));
        assert_eq!(t.row(0).unwrap(), before.row(0).unwrap());
    }

    #[test]
    fn masked_gradient_leaves_suffix_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut t = EmbeddingTable::init("f", 5, 6, &mut rng);
        let stats = power_stats(5);
        let out = masked_lookup(&t, &rigged_amtl(6, 2), &stats, 4).unwrap();
        // d<g, m ⊙ e>/de = m ⊙ g
        let upstream = [0.3, -0.1, 0.4, 0.9, -0.5, 0.2];
        let grad: Vec<f64> = upstream.iter().zip(out.forward.mask.iter()).map(|(g, m)| g * m).collect();
        let before = t.lookup(4).unwrap();
        t.sgd_update(4, &grad, 0.1).unwrap();
        let after = t.lookup(4).unwrap();
        assert!((0..3).all(|j| after[j] != before[j]));
        assert!((3..6).all(|j| after[j] == before[j]));
    }

    #[test]
    fn row_gradients_accumulate_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut t = EmbeddingTable::init("f", 3, 2, &mut rng);
        let before = t.clone();
        let mut acc = RowGradients::new();
        acc.add(2, &[1.0, 2.0]);
        acc.add(0, &[0.5, 0.5]);
        acc.add(2, &[1.0, -2.0]);
        assert_eq!(acc.get(2).unwrap(), &[2.0, 0.0]);
        acc.apply(&mut t, 0.1, 0.5).unwrap();
        assert_eq!(t.row(2).unwrap()[0], before.row(2).unwrap()[0] - 0.1);
        assert_eq!(t.row(1).unwrap(), before.row(1).unwrap());
    }
}
