//! Hard-negative mining from a fixed rank window.
//!
//! The corpus is ranked against each query by exact cosine. Negatives are
//! sampled from 1-based positions `rank_lo..=rank_hi`, skipping gold
//! documents after ranking so positions match a plain retrieval dump.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine, Vec64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub rank_lo: usize,
    pub rank_hi: usize,
    pub samples_per_query: usize,
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            rank_lo: 50,
            rank_hi: 100,
            samples_per_query: 15,
            seed: 0,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank_lo == 0 || self.rank_lo > self.rank_hi {
            return Err(Error::InvalidConfig(format!(
                "rank window [{}, {}] must satisfy 1 <= rank_lo <= rank_hi",
                self.rank_lo, self.rank_hi
            )));
        }
        if self.samples_per_query == 0 {
            return Err(Error::InvalidConfig("samples_per_query must be at least 1".into()));
        }
        Ok(())
    }
}

/// Corpus indices by descending cosine to `query`; ties keep ascending index.
pub fn rank_corpus(query: &[f64], corpus: &[Vec64]) -> Result<Vec<usize>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let scores: Vec<f64> = corpus.iter().map(|d| cosine(query, d)).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    Ok(order)
}

/// Samples up to `samples_per_query` indices from the rank window, returned
/// in rank order.
pub fn mine_negatives(
    query: &[f64],
    corpus: &[Vec64],
    gold: &HashSet<usize>,
    config: &MiningConfig,
) -> Result<Vec<usize>> {
    config.validate()?;
    let ranked = rank_corpus(query, corpus)?;
    if let Some(&bad) = gold.iter().find(|&&g| g >= corpus.len()) {
        return Err(Error::WindowEmpty(format!("gold index {bad} outside a corpus of {}", corpus.len())));
    }
    if corpus.len() < config.rank_lo {
        return Err(Error::WindowEmpty(format!(
            "corpus of {} never reaches rank {}",
            corpus.len(),
            config.rank_lo
        )));
    }
    let hi = config.rank_hi.min(corpus.len());
    let window: Vec<usize> = ranked[config.rank_lo - 1..hi]
        .iter()
        .copied()
        .filter(|i| !gold.contains(i))
        .collect();
    if window.is_empty() {
        return Err(Error::WindowEmpty(format!(
            "every document at ranks {}..={hi} is gold",
            config.rank_lo
        )));
    }
    let take = config.samples_per_query.min(window.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut picked = sample(&mut rng, window.len(), take).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|p| window[p]).collect())
}

/// Mines every query with its own RNG seeded by `seed ^ query_index`, so the
/// result does not depend on processing order.
pub fn mine_all(
    queries: &[Vec64],
    corpus: &[Vec64],
    gold: &[HashSet<usize>],
    config: &MiningConfig,
) -> Result<Vec<Vec<usize>>> {
    if queries.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: queries.len(),
            right: gold.len(),
        });
    }
    queries
        .iter()
        .zip(gold)
        .enumerate()
        .map(|(i, (q, g))| {
            let per_query = MiningConfig {
                seed: config.seed ^ i as u64,
                ..config.clone()
            };
            mine_negatives(q, corpus, g, &per_query)
        })
        .collect()
}
