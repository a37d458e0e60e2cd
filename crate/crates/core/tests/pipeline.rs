//! End-to-end use of the public API: train, checkpoint, compress, evaluate.

use std::collections::BTreeMap;

use amtl_core::amtl::{apply_mask, prefix_mask};
use amtl_core::eval::{compare, dimension_usage, Candidate};
use amtl_core::storage::compress;
use amtl_core::{CtrModel, FieldConfig, FrequencyStats, ModelConfig, NoClock, Policy, TrainingExample};

fn stats() -> Vec<FrequencyStats> {
    let counts = |vocab: u64| (1..=vocab).map(|r| 300 / r).collect::<Vec<_>>();
    vec![FrequencyStats::from_counts("user", counts(30)), FrequencyStats::from_counts("item", counts(25))]
}

fn data() -> Vec<TrainingExample> {
    (0..400usize).map(|i| TrainingExample::new(((i * 7 + i / 3) % 5 < 2) as u8, vec![i % 30, (i * 11) % 25])).collect()
}

fn config(policy: Policy) -> ModelConfig {
    ModelConfig {
        fields: vec![FieldConfig::new("user", 30, 8, policy), FieldConfig::new("item", 25, 8, policy)],
        head_hidden: vec![8],
        epochs: 2,
        batch_size: 16,
        seed: 11,
        ..ModelConfig::default()
    }
}

fn trained(policy: Policy) -> CtrModel {
    let mut m = CtrModel::new(config(policy), stats()).unwrap();
    m.fit(&data(), &NoClock).unwrap();
    m
}

#[test]
fn checkpoint_restores_predictions_exactly() {
    let m = trained(Policy::Amtl);
    let back = CtrModel::from_checkpoint(&m.to_checkpoint(), stats()).unwrap();
    let (a, b) = (m.predict_batch(&data()).unwrap(), back.predict_batch(&data()).unwrap());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn compressed_rows_match_masked_lookups() {
    let m = trained(Policy::Amtl);
    for f in 0..2 {
        let ks = m.field_selections(f).unwrap();
        let sel: BTreeMap<usize, usize> = ks.iter().copied().enumerate().collect();
        let store = compress(m.table(f), &sel).unwrap();
        for (id, &k) in ks.iter().enumerate() {
            let expected = apply_mask(m.table(f).row(id).unwrap(), &prefix_mask(8, k)).unwrap();
            assert_eq!(store.fetch(id as u64).unwrap(), expected);
        }
        assert_eq!(store.value_words(), ks.iter().map(|k| k + 1).sum::<usize>());
    }
}

#[test]
fn fbe_reports_full_ratio() {
    let fbe = trained(Policy::Fbe);
    assert_eq!(dimension_usage(&fbe).unwrap(), (8.0, 1.0));
    let rows = compare(&[Candidate { label: "fbe".into(), model: &fbe, sec_per_epoch: None }], &data()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].ratio, 1.0);
    assert!((0.0..=1.0).contains(&rows[0].auc));
}

#[test]
fn every_policy_trains_and_stays_in_range() {
    for policy in Policy::ALL {
        let m = trained(policy);
        let (avg, ratio) = dimension_usage(&m).unwrap();
        assert!((1.0..=8.0).contains(&avg), "{policy}: {avg}");
        assert!(ratio > 0.0 && ratio <= 1.0);
        assert!(m.predict_batch(&data()).unwrap().iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
