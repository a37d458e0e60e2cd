//! Evaluation: rank-sum ROC AUC, frequency-group dimension profiles and
//! method comparison rows.

use alloc::string::String;
use alloc::vec::Vec;

use crate::config::Policy;
use crate::error::{Error, Result};
use crate::model::{CtrModel, TrainingExample};

/// Number of frequency groups used for dimension profiles.
pub const DEFAULT_GROUPS: usize = 7;

/// Labelled scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredSet {
    pub pairs: Vec<(u8, f64)>,
}

impl ScoredSet {
    pub fn new(pairs: Vec<(u8, f64)>) -> Self {
        Self { pairs }
    }

    pub fn from_parts(labels: &[u8], scores: &[f64]) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::Shape { what: "scores", expected: labels.len(), actual: scores.len() });
        }
        Ok(Self { pairs: labels.iter().copied().zip(scores.iter().copied()).collect() })
    }

    /// Merges shards; the result does not depend on shard order.
    pub fn merge(shards: impl IntoIterator<Item = ScoredSet>) -> Self {
        Self { pairs: shards.into_iter().flat_map(|s| s.pairs).collect() }
    }

    fn class_counts(&self) -> Result<(u64, u64)> {
        let mut pos = 0u64;
        let mut neg = 0u64;
        for &(label, score) in &self.pairs {
            if score.is_nan() {
                return Err(Error::Contract("scores must not be NaN"));
            }
            match label {
                1 => pos += 1,
                0 => neg += 1,
                _ => return Err(Error::Contract("labels must be 0 or 1")),
            }
        }
        if pos == 0 || neg == 0 {
            return Err(Error::Contract("AUC needs at least one positive and one negative"));
        }
        Ok((pos, neg))
    }

    /// Probability that a random positive outscores a random negative, ties
    /// counting one half. Rank-sum over average ranks, `O(n log n)`.
    pub fn auc(&self) -> Result<f64> {
        let (pos, neg) = self.class_counts()?;
        let mut sorted: Vec<(f64, u8)> = self.pairs.iter().map(|&(l, s)| (s, l)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Twice the positive rank sum, exact in integers: a tie block covering
        // 1-based ranks i..=j gives each member 2·avg_rank = i + j.
        let mut twice_rank_sum: u128 = 0;
        let mut start = 0;
        while start < sorted.len() {
            let mut end = start;
            while end + 1 < sorted.len() && sorted[end + 1].0 == sorted[start].0 {
                end += 1;
            }
            let block_pos = sorted[start..=end].iter().filter(|(_, l)| *l == 1).count() as u128;
            twice_rank_sum += block_pos * (start as u128 + 1 + end as u128 + 1);
            start = end + 1;
        }
        let twice_u = twice_rank_sum - (pos as u128) * (pos as u128 + 1);
        Ok(twice_u as f64 / (2 * pos as u128 * neg as u128) as f64)
    }
}

/// Mean count, mean kept dimension and size of one frequency group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupProfile {
    pub mean_count: f64,
    pub mean_dim: f64,
    pub members: usize,
}

/// Per-group profile, group 0 being the least frequent.
#[derive(Debug, Clone, PartialEq)]
pub struct DimProfile {
    pub field: String,
    pub groups: Vec<GroupProfile>,
}

impl DimProfile {
    pub fn mean_dims(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.mean_dim).collect()
    }

    /// Spearman correlation between group index and mean kept dimension.
    pub fn trend(&self) -> f64 {
        let idx: Vec<f64> = (0..self.groups.len()).map(|i| i as f64).collect();
        spearman(&idx, &self.mean_dims())
    }
}

/// Hard-path kept dimension `k+1` of every value, aggregated per frequency group.
pub fn dim_profile(model: &CtrModel, field: usize, n_groups: usize) -> Result<DimProfile> {
    let cfg = &model.config().fields[field];
    if !cfg.policy.is_adaptive() {
        return Err(Error::Config(alloc::format!("field `{}` has no adaptive policy", cfg.name)));
    }
    let stats = &model.stats()[field];
    let ks = model.field_selections(field)?;
    let groups = stats
        .frequency_groups(n_groups)?
        .into_iter()
        .map(|ids| {
            let n = ids.len() as f64;
            GroupProfile {
                mean_count: ids.iter().map(|&i| stats.counts()[i as usize] as f64).sum::<f64>() / n,
                mean_dim: ids.iter().map(|&i| (ks[i as usize] + 1) as f64).sum::<f64>() / n,
                members: ids.len(),
            }
        })
        .collect();
    Ok(DimProfile { field: cfg.name.clone(), groups })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let r = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            ranks[i] = r;
        }
        start = end + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// Zero when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = rx.len().min(ry.len()) as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / libm::sqrt(sxx * syy)
}

/// One line of a method comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub policy: Policy,
    pub auc: f64,
    pub avg_dim: f64,
    /// `avg_dim / D`, pooled over all fields.
    pub ratio: f64,
    pub sec_per_epoch: Option<f64>,
}

/// Kept-dimension summary over every field: `(Σ(k+1) / Σ|F|, Σ(k+1) / Σ|F|·D)`.
pub fn dimension_usage(model: &CtrModel) -> Result<(f64, f64)> {
    let mut kept = 0usize;
    let mut ids = 0usize;
    let mut full = 0usize;
    for (fi, f) in model.config().fields.iter().enumerate() {
        kept += model.field_selections(fi)?.iter().map(|k| k + 1).sum::<usize>();
        ids += f.vocab_size;
        full += f.vocab_size * f.dim;
    }
    Ok((kept as f64 / ids as f64, kept as f64 / full as f64))
}

/// Test-set AUC of `model` on the hard path.
pub fn test_auc(model: &CtrModel, test: &[TrainingExample]) -> Result<f64> {
    let scores = model.predict_batch(test)?;
    let labels: Vec<u8> = test.iter().map(|e| e.label).collect();
    ScoredSet::from_parts(&labels, &scores)?.auc()
}

/// A model to compare, with its label and optional training time per epoch.
pub struct Candidate<'a> {
    pub label: String,
    pub model: &'a CtrModel,
    pub sec_per_epoch: Option<f64>,
}

/// One row per candidate, all scored on the same test set.
pub fn compare(candidates: &[Candidate<'_>], test: &[TrainingExample]) -> Result<Vec<ReportRow>> {
    if let Some(first) = candidates.first() {
        let fields = |m: &CtrModel| m.config().fields.iter().map(|f| (f.name.clone(), f.vocab_size)).collect::<Vec<_>>();
        let reference = fields(first.model);
        if candidates.iter().any(|c| fields(c.model) != reference) {
            return Err(Error::Contract("compared models must share the same fields and vocabularies"));
        }
    }
    candidates
        .iter()
        .map(|c| {
            let (avg_dim, ratio) = dimension_usage(c.model)?;
            Ok(ReportRow {
                label: c.label.clone(),
                policy: c.model.config().fields[0].policy,
                auc: test_auc(c.model, test)?,
                avg_dim,
                ratio,
                sec_per_epoch: c.sec_per_epoch,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    /// O(n²) pair counting: wins + ½ ties over all positive/negative pairs.
    fn brute_force_auc(pairs: &[(u8, f64)]) -> f64 {
        let mut twice_u = 0u64;
        let mut n = 0u64;
        for &(la, sa) in pairs.iter().filter(|p| p.0 == 1) {
            for &(_, sb) in pairs.iter().filter(|p| p.0 == 0) {
                let _ = la;
                n += 1;
                twice_u += if sa > sb { 2 } else if sa == sb { 1 } else { 0 };
            }
        }
        twice_u as f64 / (2 * n) as f64
    }

    #[test]
    fn auc_examples() {
        let perfect = ScoredSet::new(vec![(0, 0.1), (0, 0.2), (1, 0.8), (1, 0.9)]);
        assert_eq!(perfect.auc().unwrap(), 1.0);
        let ties = ScoredSet::new(vec![(0, 0.5), (1, 0.5), (0, 0.5), (1, 0.5), (1, 0.5)]);
        assert_eq!(ties.auc().unwrap(), 0.5);
        let mixed = ScoredSet::new(vec![(0, 0.1), (0, 0.4), (1, 0.35), (1, 0.8)]);
        assert_eq!(mixed.auc().unwrap(), 0.75);
        assert!(ScoredSet::new(vec![(1, 0.3), (1, 0.5)]).auc().is_err());
        assert!(ScoredSet::new(vec![(0, 0.3), (2, 0.5)]).auc().is_err());
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[0.0, 1.0, 2.0], &[1.0, 5.0, 9.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[0.0, 1.0, 2.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&[0.0, 1.0, 2.0], &[4.0, 4.0, 4.0]), 0.0);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        // Hand-computed: ranks y = [1, 3, 2, 4] vs x = [1, 2, 3, 4] -> 1 - 6·2/(4·15) = 0.8
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 30.0, 20.0, 40.0]) - 0.8).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn auc_equals_pair_counting(
            pairs in prop::collection::vec((0u8..2, 0u32..20), 2..200),
        ) {
            let pairs: Vec<(u8, f64)> = pairs.into_iter().map(|(l, s)| (l, s as f64 / 20.0)).collect();
            prop_assume!(pairs.iter().any(|p| p.0 == 1) && pairs.iter().any(|p| p.0 == 0));
            let set = ScoredSet::new(pairs.clone());
            prop_assert_eq!(set.auc().unwrap().to_bits(), brute_force_auc(&pairs).to_bits());
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            pairs in prop::collection::vec((0u8..2, -5.0f64..5.0), 2..100),
        ) {
            prop_assume!(pairs.iter().any(|p| p.0 == 1) && pairs.iter().any(|p| p.0 == 0));
            let a = ScoredSet::new(pairs.clone()).auc().unwrap();
            let transformed: Vec<(u8, f64)> = pairs.iter().map(|&(l, s)| (l, libm::exp(s) * 3.0 + 1.0)).collect();
            let b = ScoredSet::new(transformed).auc().unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn shard_merge_is_order_independent(
            pairs in prop::collection::vec((0u8..2, 0u32..10), 4..100),
            cut in 1usize..4,
        ) {
            let pairs: Vec<(u8, f64)> = pairs.into_iter().map(|(l, s)| (l, s as f64)).collect();
            prop_assume!(pairs.iter().any(|p| p.0 == 1) && pairs.iter().any(|p| p.0 == 0));
            let at = pairs.len() * cut / 4;
            let a = ScoredSet::new(pairs[..at].to_vec());
            let b = ScoredSet::new(pairs[at..].to_vec());
            let ab = ScoredSet::merge([a.clone(), b.clone()]).auc().unwrap();
            let ba = ScoredSet::merge([b, a]).auc().unwrap();
            prop_assert_eq!(ab, ba);
        }
    }
}
