//! Matryoshka training: the routed loss is evaluated on nested prefixes of
//! every embedding and the weighted terms are summed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{hybrid_loss, LossBatch, LossConfig, LossOutput};
use crate::numerics::Vec64;
use crate::task::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrlConfig {
    /// Strictly increasing prefix lengths.
    pub dims: Vec<usize>,
    /// One positive weight per entry of `dims`.
    pub weights: Vec<f64>,
}

impl Default for MrlConfig {
    fn default() -> Self {
        Self::uniform(vec![16, 32, 64, 128])
    }
}

impl MrlConfig {
    pub fn uniform(dims: Vec<usize>) -> Self {
        let weights = vec![1.0; dims.len()];
        Self { dims, weights }
    }

    /// A single full-width slice, i.e. plain single-dimension training.
    pub fn single(dim: usize) -> Self {
        Self::uniform(vec![dim])
    }

    pub fn max_dim(&self) -> usize {
        self.dims.last().copied().unwrap_or(0)
    }

    pub fn validate(&self, out_dim: usize) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::InvalidConfig("mrl dims must be non-empty".into()));
        }
        if self.dims.len() != self.weights.len() {
            return Err(Error::InvalidConfig(format!(
                "{} mrl dims but {} weights",
                self.dims.len(),
                self.weights.len()
            )));
        }
        if self.dims[0] == 0 || self.dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "mrl dims must be strictly increasing and positive: {:?}",
                self.dims
            )));
        }
        if self.max_dim() > out_dim {
            return Err(Error::DimOutOfRange {
                dim: self.max_dim(),
                len: out_dim,
            });
        }
        if self.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig("mrl weights must be > 0".into()));
        }
        Ok(())
    }
}

/// The first `d` coordinates of `v`.
pub fn prefix(v: &[f64], d: usize) -> Result<Vec64> {
    if d == 0 || d > v.len() {
        return Err(Error::DimOutOfRange { dim: d, len: v.len() });
    }
    Ok(Vec64::from(&v[..d]))
}

/// `Σₖ weights[k] · hybrid_loss(task, batch[..dims[k]])`, with gradients
/// laid out at full width. Coordinates at or beyond `dims[k]` receive
/// nothing from term `k`.
pub fn mrl_loss(
    task: Task,
    batch: &LossBatch,
    mrl: &MrlConfig,
    loss_config: &LossConfig,
) -> Result<LossOutput> {
    let min_len = batch.vectors().iter().map(|v| v.len()).min().ok_or(Error::EmptyBatch)?;
    mrl.validate(min_len)?;

    let mut grads = batch.zeros_like();
    let mut value = 0.0;
    for (&dim, &weight) in mrl.dims.iter().zip(&mrl.weights) {
        let sliced = batch.try_map(|v| prefix(v, dim))?;
        let term = hybrid_loss(task, &sliced, loss_config)?;
        value += weight * term.value;
        grads.add_scaled(weight, &term.grads)?;
    }
    Ok(LossOutput { value, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{RetrievalBatch, ScoredPairBatch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec64 {
        Vec64::from((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    fn retrieval(rng: &mut ChaCha8Rng, dim: usize) -> LossBatch {
        LossBatch::Retrieval(RetrievalBatch {
            queries: (0..3).map(|_| rand_vec(rng, dim)).collect(),
            positives: (0..3).map(|_| rand_vec(rng, dim)).collect(),
            hard_negatives: (0..3).map(|_| vec![rand_vec(rng, dim)]).collect(),
        })
    }

    #[test]
    fn prefix_examples() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(&*prefix(&v, 3).unwrap(), &v);
        assert_eq!(&*prefix(&v, 1).unwrap(), &[1.0]);
        let long: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(prefix(&prefix(&long, 8).unwrap(), 4).unwrap(), prefix(&long, 4).unwrap());
        assert!(matches!(prefix(&v, 4), Err(Error::DimOutOfRange { dim: 4, len: 3 })));
        assert!(prefix(&v, 0).is_err());
    }

    #[test]
    fn single_full_dim_equals_hybrid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = retrieval(&mut rng, 6);
        let cfg = LossConfig::default();
        let plain = hybrid_loss(Task::Retrieval, &batch, &cfg).unwrap();
        let mrl = mrl_loss(Task::Retrieval, &batch, &MrlConfig::single(6), &cfg).unwrap();
        assert!((plain.value - mrl.value).abs() <= 1e-15);
        for (a, b) in plain.grads.vectors().iter().zip(mrl.grads.vectors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn zero_padding_doubles_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pad = |v: Vec64| {
            let mut x = v.into_inner();
            x.extend([0.0; 4]);
            Vec64::from(x)
        };
        let batch = LossBatch::Scored(ScoredPairBatch {
            lefts: (0..4).map(|_| pad(rand_vec(&mut rng, 4))).collect(),
            rights: (0..4).map(|_| pad(rand_vec(&mut rng, 4))).collect(),
            scores: vec![0.2, 0.9, 0.4, 0.7],
        });
        let cfg = LossConfig::default();
        let full = hybrid_loss(Task::Sts, &batch, &cfg).unwrap().value;
        let mrl = mrl_loss(Task::Sts, &batch, &MrlConfig::uniform(vec![4, 8]), &cfg).unwrap();
        assert!((mrl.value - 2.0 * full).abs() < 1e-12);
    }

    #[test]
    fn two_dims_equal_two_sliced_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = retrieval(&mut rng, 4);
        let cfg = LossConfig::default();
        let manual: f64 = [2, 4]
            .iter()
            .map(|&d| {
                let sliced = batch.try_map(|v| Ok(Vec64::from(&v[..d]))).unwrap();
                hybrid_loss(Task::Retrieval, &sliced, &cfg).unwrap().value
            })
            .sum();
        let got = mrl_loss(Task::Retrieval, &batch, &MrlConfig::uniform(vec![2, 4]), &cfg).unwrap();
        assert!((got.value - manual).abs() < 1e-12);
    }

    #[test]
    fn gradient_support_follows_nesting() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = retrieval(&mut rng, 8);
        let cfg = LossConfig::default();
        let only_small = mrl_loss(Task::Retrieval, &batch, &MrlConfig::single(3), &cfg).unwrap();
        for g in only_small.grads.vectors() {
            assert!(g[3..].iter().all(|&x| x == 0.0));
            assert!(g[..3].iter().any(|&x| x != 0.0));
        }
        // Coordinate c collects exactly the terms with c < dims[k].
        let both = mrl_loss(Task::Retrieval, &batch, &MrlConfig::uniform(vec![3, 8]), &cfg).unwrap();
        let big = mrl_loss(Task::Retrieval, &batch, &MrlConfig::single(8), &cfg).unwrap();
        for ((g, s), b) in both.grads.vectors().iter().zip(only_small.grads.vectors()).zip(big.grads.vectors()) {
            for c in 0..8 {
                let want = b[c] + if c < 3 { s[c] } else { 0.0 };
                assert!((g[c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(MrlConfig::default().validate(128).is_ok());
        assert!(MrlConfig::default().validate(64).is_err());
        assert!(MrlConfig::uniform(vec![32, 16]).validate(128).is_err());
        assert!(MrlConfig::uniform(vec![]).validate(128).is_err());
        let bad_weights = MrlConfig {
            dims: vec![8],
            weights: vec![0.0],
        };
        assert!(bad_weights.validate(8).is_err());
    }
}
