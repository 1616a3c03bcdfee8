//! Seeded finite-difference checks of every loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::losses::{cosent, info_nce, label_nce, LabeledBatch, LossBatch, LossConfig, LossOutput, RetrievalBatch, ScoredPairBatch};
use crate::mrl::{mrl_loss, MrlConfig};
use crate::numerics::{finite_diff_grad, max_rel_err, Vec64, FD_STEP};
use crate::task::Task;

pub const DEFAULT_BATCHES: usize = 20;
pub const TOLERANCE: f64 = 1e-4;

const DIM: usize = 16;
const TAU: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub loss: &'static str,
    pub batches: usize,
    /// Worst max-norm relative error over all batches.
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

fn rand_vec(rng: &mut ChaCha8Rng) -> Vec64 {
    Vec64::from((0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
}

fn rand_vecs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec64> {
    (0..n).map(|_| rand_vec(rng)).collect()
}

fn retrieval(rng: &mut ChaCha8Rng) -> LossBatch {
    let rows = rng.random_range(2..=5);
    let negs = rng.random_range(0..=2);
    LossBatch::Retrieval(RetrievalBatch {
        queries: rand_vecs(rng, rows),
        positives: rand_vecs(rng, rows),
        hard_negatives: (0..rows).map(|_| rand_vecs(rng, negs)).collect(),
    })
}

fn scored(rng: &mut ChaCha8Rng) -> LossBatch {
    let rows = rng.random_range(2..=6);
    LossBatch::Scored(ScoredPairBatch {
        lefts: rand_vecs(rng, rows),
        rights: rand_vecs(rng, rows),
        scores: (0..rows).map(|_| rng.random_range(0.0..5.0)).collect(),
    })
}

fn labeled(rng: &mut ChaCha8Rng) -> LossBatch {
    let rows = rng.random_range(1..=4);
    let negs = rng.random_range(1..=4);
    LossBatch::Labeled(LabeledBatch {
        texts: rand_vecs(rng, rows),
        pos_labels: rand_vecs(rng, rows),
        neg_labels: (0..rows).map(|_| rand_vecs(rng, negs)).collect(),
    })
}

fn flatten(batch: &LossBatch) -> Vec<f64> {
    batch.vectors().iter().flat_map(|v| v.iter().copied()).collect()
}

fn unflatten(template: &LossBatch, flat: &[f64]) -> LossBatch {
    let mut at = 0;
    template
        .try_map(|v| {
            let out = Vec64::from(&flat[at..at + v.len()]);
            at += v.len();
            Ok(out)
        })
        .expect("flat layout matches template")
}

/// Relative error of `loss`'s analytic gradient at `batch`.
fn check_one(batch: &LossBatch, loss: &dyn Fn(&LossBatch) -> Result<LossOutput>) -> Result<f64> {
    let analytic = flatten(&loss(batch)?.grads);
    let f = |x: &[f64]| loss(&unflatten(batch, x)).map(|o| o.value).unwrap_or(f64::NAN);
    let numeric = finite_diff_grad(f, &flatten(batch), FD_STEP)?;
    Ok(max_rel_err(&analytic, &numeric))
}

fn suite(
    name: &'static str,
    seed: u64,
    batches: usize,
    make: impl Fn(&mut ChaCha8Rng, usize) -> LossBatch,
    loss: impl Fn(&LossBatch) -> Result<LossOutput>,
) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..batches {
        let batch = make(&mut rng, i);
        worst = worst.max(check_one(&batch, &loss)?);
    }
    Ok(GradCheck {
        loss: name,
        batches,
        max_rel_err: worst,
    })
}

/// Checks InfoNCE, CoSENT, label-NCE and the Matryoshka sum on `batches`
/// random batches each. The Matryoshka suite cycles through the three task
/// families.
pub fn run(seed: u64, batches: usize) -> Result<Vec<GradCheck>> {
    let cfg = LossConfig::default();
    let mrl = MrlConfig::uniform(vec![4, 8, DIM]);
    let tasks = [Task::Retrieval, Task::Sts, Task::Classification];
    Ok(vec![
        suite("info_nce", seed, batches, |r, _| retrieval(r), |b| match b {
            LossBatch::Retrieval(b) => info_nce(b, TAU, true),
            _ => unreachable!(),
        })?,
        suite("cosent", seed ^ 1, batches, |r, _| scored(r), |b| match b {
            LossBatch::Scored(b) => cosent(b, TAU),
            _ => unreachable!(),
        })?,
        suite("label_nce", seed ^ 2, batches, |r, _| labeled(r), |b| match b {
            LossBatch::Labeled(b) => label_nce(b, TAU),
            _ => unreachable!(),
        })?,
        suite(
            "mrl",
            seed ^ 3,
            batches,
            |r, i| match i % 3 {
                0 => retrieval(r),
                1 => scored(r),
                _ => labeled(r),
            },
            |b| {
                let task = match b {
                    LossBatch::Retrieval(_) => tasks[0],
                    LossBatch::Scored(_) => tasks[1],
                    LossBatch::Labeled(_) => tasks[2],
                };
                mrl_loss(task, b, &mrl, &cfg)
            },
        )?,
    ])
}
