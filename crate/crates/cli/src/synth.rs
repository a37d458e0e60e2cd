//! Synthetic CTR data with a planted, frequency-dependent signal.
//!
//! Values of every field are drawn from a Zipf law over a seeded random
//! permutation of the vocabulary. Each value carries a latent vector whose
//! support shrinks with its frequency rank: the most frequent values use all
//! `latent_rank` coordinates, the rarest only the first. The click logit is
//! a global bias, per-value main effects and the scaled sum of pairwise inner
//! products between fields' latent vectors.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};

use amtl_core::{FieldVocab, TrainingExample};

use crate::dataset::{DataHeader, Dataset, DEFAULT_TEST_RATIO};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub fields: Vec<FieldVocab>,
    pub n_examples: usize,
    pub zipf_exponent: f64,
    pub latent_rank: usize,
    /// Weight of the latent interaction term.
    pub interaction_scale: f64,
    /// Standard deviation of per-value main effects.
    pub main_effect_std: f64,
    pub bias: f64,
    pub test_ratio: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            fields: vec![FieldVocab::new("user", 1000), FieldVocab::new("item", 1000)],
            n_examples: 200_000,
            zipf_exponent: 1.1,
            latent_rank: 8,
            interaction_scale: 1.0,
            main_effect_std: 0.5,
            bias: 0.0,
            test_ratio: DEFAULT_TEST_RATIO,
            seed: 0,
        }
    }
}

/// Latent support size for frequency rank `rank` in a vocabulary of `vocab`.
pub fn support_size(rank: usize, vocab: usize, latent_rank: usize) -> usize {
    if vocab <= 1 {
        return latent_rank;
    }
    let share = 1.0 - ((rank + 1) as f64).ln() / (vocab as f64).ln();
    1 + ((latent_rank - 1) as f64 * share).floor().max(0.0) as usize
}

/// Planted parameters of one field.
#[derive(Debug, Clone)]
pub struct PlantedField {
    /// `id_of_rank[r]` is the value drawn at Zipf rank `r`.
    pub id_of_rank: Vec<usize>,
    /// Indexed by id.
    pub main: Vec<f64>,
    /// Indexed by id; zero past the support.
    pub latent: Vec<Vec<f64>>,
    pub support: Vec<usize>,
}

fn plant(vocab: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<PlantedField> {
    let mut id_of_rank: Vec<usize> = (0..vocab).collect();
    id_of_rank.shuffle(rng);
    let normal = Normal::new(0.0, 1.0).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut main = vec![0.0; vocab];
    let mut latent = vec![vec![0.0; cfg.latent_rank]; vocab];
    let mut support = vec![0; vocab];
    for (rank, &id) in id_of_rank.iter().enumerate() {
        main[id] = cfg.main_effect_std * normal.sample(rng);
        let d = support_size(rank, vocab, cfg.latent_rank);
        support[id] = d;
        for v in &mut latent[id][..d] {
            *v = normal.sample(rng);
        }
    }
    Ok(PlantedField { id_of_rank, main, latent, support })
}

/// Generates the dataset and the planted parameters behind it.
pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, Vec<PlantedField>)> {
    if cfg.fields.is_empty() || cfg.fields.iter().any(|f| f.vocab_size == 0) {
        return Err(CliError::Usage("every field needs a positive vocabulary size".into()));
    }
    if !(cfg.zipf_exponent > 0.0) || cfg.latent_rank == 0 {
        return Err(CliError::Usage("zipf exponent and latent rank must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.test_ratio) {
        return Err(CliError::Usage("test ratio must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let planted = cfg
        .fields
        .iter()
        .map(|f| plant(f.vocab_size, cfg, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let samplers = cfg
        .fields
        .iter()
        .map(|f| Zipf::new(f.vocab_size as f64, cfg.zipf_exponent).map_err(|e| CliError::Usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let norm = 1.0 / (cfg.latent_rank as f64).sqrt();
    let mut examples = Vec::with_capacity(cfg.n_examples);
    for _ in 0..cfg.n_examples {
        let ids: Vec<usize> = samplers
            .iter()
            .zip(&planted)
            .map(|(z, p)| p.id_of_rank[z.sample(&mut rng) as usize - 1])
            .collect();
        let mut logit = cfg.bias;
        for (p, &id) in planted.iter().zip(&ids) {
            logit += p.main[id];
        }
        for a in 0..ids.len() {
            for b in a + 1..ids.len() {
                let (u, v) = (&planted[a].latent[ids[a]], &planted[b].latent[ids[b]]);
                logit += cfg.interaction_scale * norm * u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        let p = 1.0 / (1.0 + (-logit).exp());
        let label = rng.random::<f64>() < p;
        examples.push(TrainingExample::new(label as u8, ids));
    }
    let header = DataHeader { fields: cfg.fields.clone(), split_salt: cfg.seed, test_ratio: cfg.test_ratio };
    Ok((Dataset { header, examples }, planted))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, seed: u64) -> SynthConfig {
        SynthConfig { n_examples: n, seed, ..SynthConfig::default() }
    }

    #[test]
    fn empty_dataset_keeps_header() {
        let (ds, _) = generate(&small(0, 1)).unwrap();
        assert!(ds.examples.is_empty());
        assert_eq!(ds.to_text().lines().count(), 1);
    }

    #[test]
    fn head_is_far_above_uniform() {
        let (ds, planted) = generate(&small(50_000, 3)).unwrap();
        let stats = ds.stats_of(&ds.examples).unwrap();
        let top = stats[0].count(planted[0].id_of_rank[0]).unwrap() as f64 / ds.examples.len() as f64;
        assert!(top >= 10.0 / 1000.0, "{top}");
        assert_eq!(stats[0].ids_by_rank()[0] as usize, planted[0].id_of_rank[0]);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&small(2000, 11)).unwrap().0.to_text();
        let b = generate(&small(2000, 11)).unwrap().0.to_text();
        let c = generate(&small(2000, 12)).unwrap().0.to_text();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn support_shrinks_with_rank() {
        assert_eq!(support_size(0, 1000, 8), 8);
        assert_eq!(support_size(999, 1000, 8), 1);
        let s: Vec<usize> = (0..1000).map(|r| support_size(r, 1000, 8)).collect();
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate(&SynthConfig { zipf_exponent: 0.0, ..small(1, 0) }).is_err());
        assert!(generate(&SynthConfig { fields: vec![], ..small(1, 0) }).is_err());
    }
}
