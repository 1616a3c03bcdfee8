//! Contrastive losses over batches of embeddings, each returning its value
//! and the exact gradient with respect to every input vector.
//!
//! * [`info_nce`]: softmax over the positive, the row's hard negatives and
//!   optionally every other row's documents.
//! * [`cosent`]: pairwise ranking loss over scored pairs.
//! * [`label_nce`]: softmax over a text's own label and its label negatives,
//!   with no cross-row coupling.
//! * [`hybrid_loss`]: routes a batch to one of the above by task.
//!
//! All similarities are cosines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_with_grad, log_sum_exp, softmax, Vec64};
use crate::task::Task;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau_retrieval: f64,
    pub tau_sts: f64,
    pub tau_cls: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_retrieval: 0.05,
            tau_sts: 0.05,
            tau_cls: 0.05,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("tau_retrieval", self.tau_retrieval),
            ("tau_sts", self.tau_sts),
            ("tau_cls", self.tau_cls),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {t}")));
            }
        }
        Ok(())
    }
}

/// Queries with their positive document and per-row hard negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalBatch {
    pub queries: Vec<Vec64>,
    pub positives: Vec<Vec64>,
    pub hard_negatives: Vec<Vec<Vec64>>,
}

/// Text pairs with fine-grained gold scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPairBatch {
    pub lefts: Vec<Vec64>,
    pub rights: Vec<Vec64>,
    pub scores: Vec<f64>,
}

/// Texts with the embedding of their own label and of the other labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub texts: Vec<Vec64>,
    pub pos_labels: Vec<Vec64>,
    pub neg_labels: Vec<Vec<Vec64>>,
}

/// Any batch a loss accepts. Gradients are returned in the same shape.
#[derive(Debug, Clone, PartialEq)]
pub enum LossBatch {
    Retrieval(RetrievalBatch),
    Scored(ScoredPairBatch),
    Labeled(LabeledBatch),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// Same layout as the input batch; score fields are copied through.
    pub grads: LossBatch,
}

fn zeros_like(vs: &[Vec64]) -> Vec<Vec64> {
    vs.iter().map(|v| Vec64::zeros(v.len())).collect()
}

fn zeros_like_nested(vs: &[Vec<Vec64>]) -> Vec<Vec<Vec64>> {
    vs.iter().map(|row| zeros_like(row)).collect()
}

fn map_all<F>(vs: &[Vec64], f: &mut F) -> Result<Vec<Vec64>>
where
    F: FnMut(&Vec64) -> Result<Vec64>,
{
    vs.iter().map(f).collect()
}

impl LossBatch {
    pub fn kind(&self) -> &'static str {
        match self {
            LossBatch::Retrieval(_) => "retrieval",
            LossBatch::Scored(_) => "scored-pair",
            LossBatch::Labeled(_) => "labeled",
        }
    }

    /// Every embedding in canonical order: anchors, positives, then
    /// negatives row by row.
    pub fn vectors(&self) -> Vec<&Vec64> {
        match self {
            LossBatch::Retrieval(b) => b
                .queries
                .iter()
                .chain(&b.positives)
                .chain(b.hard_negatives.iter().flatten())
                .collect(),
            LossBatch::Scored(b) => b.lefts.iter().chain(&b.rights).collect(),
            LossBatch::Labeled(b) => b
                .texts
                .iter()
                .chain(&b.pos_labels)
                .chain(b.neg_labels.iter().flatten())
                .collect(),
        }
    }

    /// Applies `f` to every embedding, keeping structure and scores.
    pub fn try_map<F>(&self, mut f: F) -> Result<LossBatch>
    where
        F: FnMut(&Vec64) -> Result<Vec64>,
    {
        Ok(match self {
            LossBatch::Retrieval(b) => LossBatch::Retrieval(RetrievalBatch {
                queries: map_all(&b.queries, &mut f)?,
                positives: map_all(&b.positives, &mut f)?,
                hard_negatives: b
                    .hard_negatives
                    .iter()
                    .map(|row| map_all(row, &mut f))
                    .collect::<Result<_>>()?,
            }),
            LossBatch::Scored(b) => LossBatch::Scored(ScoredPairBatch {
                lefts: map_all(&b.lefts, &mut f)?,
                rights: map_all(&b.rights, &mut f)?,
                scores: b.scores.clone(),
            }),
            LossBatch::Labeled(b) => LossBatch::Labeled(LabeledBatch {
                texts: map_all(&b.texts, &mut f)?,
                pos_labels: map_all(&b.pos_labels, &mut f)?,
                neg_labels: b
                    .neg_labels
                    .iter()
                    .map(|row| map_all(row, &mut f))
                    .collect::<Result<_>>()?,
            }),
        })
    }

    /// A batch of the same shape with every vector zeroed.
    pub fn zeros_like(&self) -> LossBatch {
        self.try_map(|v| Ok(Vec64::zeros(v.len())))
            .expect("zeroing cannot fail")
    }

    /// Adds `alpha * other` into `self`, vector by vector over the common
    /// prefix. Both batches must share a layout.
    pub fn add_scaled(&mut self, alpha: f64, other: &LossBatch) -> Result<()> {
        let theirs = other.vectors();
        let ours = self.vectors_mut();
        if ours.len() != theirs.len() {
            return Err(Error::ShapeMismatch(format!(
                "batch layouts differ: {} vs {} vectors",
                ours.len(),
                theirs.len()
            )));
        }
        for (a, b) in ours.into_iter().zip(theirs) {
            a.add_scaled(alpha, b);
        }
        Ok(())
    }

    fn vectors_mut(&mut self) -> Vec<&mut Vec64> {
        match self {
            LossBatch::Retrieval(b) => b
                .queries
                .iter_mut()
                .chain(b.positives.iter_mut())
                .chain(b.hard_negatives.iter_mut().flatten())
                .collect(),
            LossBatch::Scored(b) => b.lefts.iter_mut().chain(b.rights.iter_mut()).collect(),
            LossBatch::Labeled(b) => b
                .texts
                .iter_mut()
                .chain(b.pos_labels.iter_mut())
                .chain(b.neg_labels.iter_mut().flatten())
                .collect(),
        }
    }
}

fn check_dims<'a>(vs: impl IntoIterator<Item = &'a Vec64>) -> Result<()> {
    let mut it = vs.into_iter();
    if let Some(first) = it.next() {
        for v in it {
            if v.len() != first.len() {
                return Err(Error::LengthMismatch {
                    left: first.len(),
                    right: v.len(),
                });
            }
        }
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("temperature must be > 0, got {tau}")))
    }
}

/// Softmax cross-entropy of `anchor` against `candidates`, candidate 0 being
/// the target. Accumulates `scale · ∂loss` into the gradient slots and
/// returns the unscaled loss.
fn nce_row(
    anchor: &[f64],
    candidates: &[&[f64]],
    tau: f64,
    scale: f64,
    grad_anchor: &mut Vec64,
    grad_candidates: &mut [&mut Vec64],
) -> Result<f64> {
    let mut logits = Vec::with_capacity(candidates.len());
    let mut partials = Vec::with_capacity(candidates.len());
    for c in candidates {
        let (s, ga, gc) = cosine_with_grad(anchor, c)?;
        logits.push(s / tau);
        partials.push((ga, gc));
    }
    let loss = log_sum_exp(&logits)? - logits[0];
    let probs = softmax(&logits)?;
    for (k, ((ga, gc), p)) in partials.iter().zip(probs).enumerate() {
        let target = if k == 0 { 1.0 } else { 0.0 };
        let coef = scale * (p - target) / tau;
        grad_anchor.add_scaled(coef, ga);
        grad_candidates[k].add_scaled(coef, gc);
    }
    Ok(loss)
}

/// InfoNCE over a retrieval batch.
///
/// Row `i` scores its query against its positive and hard negatives and,
/// when `use_in_batch` is set, against every other row's positive and hard
/// negatives as well.
pub fn info_nce(batch: &RetrievalBatch, tau: f64, use_in_batch: bool) -> Result<LossOutput> {
    check_tau(tau)?;
    let n = batch.queries.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if batch.positives.len() != n || batch.hard_negatives.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} queries, {} positives, {} negative rows",
            batch.positives.len(),
            batch.hard_negatives.len()
        )));
    }
    check_dims(
        batch
            .queries
            .iter()
            .chain(&batch.positives)
            .chain(batch.hard_negatives.iter().flatten()),
    )?;

    let mut gq = zeros_like(&batch.queries);
    let mut gp = zeros_like(&batch.positives);
    let mut gn = zeros_like_nested(&batch.hard_negatives);
    let scale = 1.0 / n as f64;
    let mut total = 0.0;

    for i in 0..n {
        // (row, None) = row's positive; (row, Some(k)) = row's k-th negative.
        let mut slots: Vec<(usize, Option<usize>)> = vec![(i, None)];
        slots.extend((0..batch.hard_negatives[i].len()).map(|k| (i, Some(k))));
        if use_in_batch {
            for j in (0..n).filter(|&j| j != i) {
                slots.push((j, None));
                slots.extend((0..batch.hard_negatives[j].len()).map(|k| (j, Some(k))));
            }
        }
        let candidates: Vec<&[f64]> = slots
            .iter()
            .map(|&(j, k)| match k {
                None => &batch.positives[j][..],
                Some(k) => &batch.hard_negatives[j][k][..],
            })
            .collect();

        let mut local: Vec<Vec64> = candidates.iter().map(|c| Vec64::zeros(c.len())).collect();
        let mut refs: Vec<&mut Vec64> = local.iter_mut().collect();
        total += nce_row(&batch.queries[i], &candidates, tau, scale, &mut gq[i], &mut refs)?;
        for (&(j, k), g) in slots.iter().zip(&local) {
            match k {
                None => gp[j].add_scaled(1.0, g),
                Some(k) => gn[j][k].add_scaled(1.0, g),
            }
        }
    }

    Ok(LossOutput {
        value: total * scale,
        grads: LossBatch::Retrieval(RetrievalBatch {
            queries: gq,
            positives: gp,
            hard_negatives: gn,
        }),
    })
}

/// CoSENT ranking loss:
/// `ln(1 + Σ_{score(a) > score(b)} exp((cos_b − cos_a)/τ))`.
///
/// Ties in the gold scores contribute nothing.
pub fn cosent(batch: &ScoredPairBatch, tau: f64) -> Result<LossOutput> {
    check_tau(tau)?;
    let m = batch.lefts.len();
    if m == 0 {
        return Err(Error::EmptyBatch);
    }
    if batch.rights.len() != m || batch.scores.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "{m} lefts, {} rights, {} scores",
            batch.rights.len(),
            batch.scores.len()
        )));
    }
    if batch.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteEvaluation("pair score".into()));
    }
    check_dims(batch.lefts.iter().chain(&batch.rights))?;

    let mut cos = Vec::with_capacity(m);
    let mut partials = Vec::with_capacity(m);
    for (l, r) in batch.lefts.iter().zip(&batch.rights) {
        let (c, gl, gr) = cosine_with_grad(l, r)?;
        cos.push(c);
        partials.push((gl, gr));
    }

    // The leading 0 is the "1 +" term.
    let mut exponents = vec![0.0];
    let mut tuples = Vec::new();
    for a in 0..m {
        for b in 0..m {
            if batch.scores[a] > batch.scores[b] {
                exponents.push((cos[b] - cos[a]) / tau);
                tuples.push((a, b));
            }
        }
    }
    let value = log_sum_exp(&exponents)?;
    let probs = softmax(&exponents)?;

    let mut dcos = vec![0.0; m];
    for (&(a, b), p) in tuples.iter().zip(&probs[1..]) {
        dcos[b] += p / tau;
        dcos[a] -= p / tau;
    }
    let mut gl = zeros_like(&batch.lefts);
    let mut gr = zeros_like(&batch.rights);
    for k in 0..m {
        gl[k].add_scaled(dcos[k], &partials[k].0);
        gr[k].add_scaled(dcos[k], &partials[k].1);
    }

    Ok(LossOutput {
        value,
        grads: LossBatch::Scored(ScoredPairBatch {
            lefts: gl,
            rights: gr,
            scores: batch.scores.clone(),
        }),
    })
}

/// InfoNCE against label embeddings where each row's denominator holds
/// only its own label negatives.
pub fn label_nce(batch: &LabeledBatch, tau: f64) -> Result<LossOutput> {
    check_tau(tau)?;
    let n = batch.texts.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if batch.pos_labels.len() != n || batch.neg_labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} texts, {} positive labels, {} negative rows",
            batch.pos_labels.len(),
            batch.neg_labels.len()
        )));
    }
    if let Some(i) = batch.neg_labels.iter().position(|row| row.is_empty()) {
        return Err(Error::EmptyNegatives(i));
    }
    check_dims(
        batch
            .texts
            .iter()
            .chain(&batch.pos_labels)
            .chain(batch.neg_labels.iter().flatten()),
    )?;

    let mut gt = zeros_like(&batch.texts);
    let mut gp = zeros_like(&batch.pos_labels);
    let mut gn = zeros_like_nested(&batch.neg_labels);
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let candidates: Vec<&[f64]> = std::iter::once(&batch.pos_labels[i][..])
            .chain(batch.neg_labels[i].iter().map(|v| &v[..]))
            .collect();
        let mut refs: Vec<&mut Vec64> = std::iter::once(&mut gp[i]).chain(gn[i].iter_mut()).collect();
        total += nce_row(&batch.texts[i], &candidates, tau, scale, &mut gt[i], &mut refs)?;
    }

    Ok(LossOutput {
        value: total * scale,
        grads: LossBatch::Labeled(LabeledBatch {
            texts: gt,
            pos_labels: gp,
            neg_labels: gn,
        }),
    })
}

/// Routes by task: retrieval and reranking to in-batch InfoNCE, STS and
/// pair classification to CoSENT, classification and clustering to label
/// InfoNCE.
pub fn hybrid_loss(task: Task, batch: &LossBatch, config: &LossConfig) -> Result<LossOutput> {
    config.validate()?;
    match (task, batch) {
        (Task::Retrieval | Task::Reranking, LossBatch::Retrieval(b)) => {
            info_nce(b, config.tau_retrieval, true)
        }
        (Task::Sts | Task::PairClassification, LossBatch::Scored(b)) => cosent(b, config.tau_sts),
        (Task::Classification | Task::Clustering, LossBatch::Labeled(b)) => {
            label_nce(b, config.tau_cls)
        }
        (task, batch) => Err(Error::TaskBatchMismatch {
            task: task.to_string(),
            batch: batch.kind(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cosine;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vec64 {
        Vec64::from(xs.to_vec())
    }

    fn rand_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec64 {
        Vec64::from((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec64 {
        let x = rand_vec(rng, dim);
        let n = x.norm();
        Vec64::from(x.iter().map(|v| v / n).collect::<Vec<_>>())
    }

    #[test]
    fn info_nce_symmetric_two_way_is_ln2() {
        let batch = RetrievalBatch {
            queries: vec![v(&[1.0, 0.0])],
            positives: vec![v(&[1.0, 1.0])],
            hard_negatives: vec![vec![v(&[1.0, -1.0])]],
        };
        for tau in [0.05, 1.0, 3.0] {
            let out = info_nce(&batch, tau, true).unwrap();
            assert!((out.value - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn info_nce_confident_is_near_zero() {
        let batch = RetrievalBatch {
            queries: vec![v(&[1.0, 0.0])],
            positives: vec![v(&[2.0, 0.0])],
            hard_negatives: vec![vec![v(&[0.0, 1.0])]],
        };
        let want = (1.0 + (-20f64).exp()).ln();
        let got = info_nce(&batch, 0.05, false).unwrap().value;
        assert!((got - want).abs() < 1e-14);
        assert!((got - 2.061e-9).abs() < 1e-12);
    }

    /// Direct evaluation of the in-batch InfoNCE formula with explicit loops.
    fn naive_info_nce(b: &RetrievalBatch, tau: f64) -> f64 {
        let n = b.queries.len();
        let mut total = 0.0;
        for i in 0..n {
            let s = |d: &Vec64| (cosine(&b.queries[i], d).unwrap() / tau).exp();
            let pos = s(&b.positives[i]);
            let mut denom = pos;
            for d in &b.hard_negatives[i] {
                denom += s(d);
            }
            for j in 0..n {
                if j != i {
                    denom += s(&b.positives[j]);
                    for d in &b.hard_negatives[j] {
                        denom += s(d);
                    }
                }
            }
            total += (pos / denom).ln();
        }
        -total / n as f64
    }

    #[test]
    fn info_nce_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let batch = RetrievalBatch {
                queries: (0..2).map(|_| unit(&mut rng, 6)).collect(),
                positives: (0..2).map(|_| unit(&mut rng, 6)).collect(),
                hard_negatives: (0..2).map(|_| vec![unit(&mut rng, 6)]).collect(),
            };
            let got = info_nce(&batch, 0.5, true).unwrap().value;
            assert!((got - naive_info_nce(&batch, 0.5)).abs() < 1e-10);
        }
    }

    #[test]
    fn info_nce_in_batch_flag_changes_denominator() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = RetrievalBatch {
            queries: (0..3).map(|_| rand_vec(&mut rng, 4)).collect(),
            positives: (0..3).map(|_| rand_vec(&mut rng, 4)).collect(),
            hard_negatives: vec![vec![]; 3],
        };
        let without = info_nce(&batch, 0.1, false).unwrap();
        // Only the positive in the denominator: exactly zero loss.
        assert_eq!(without.value, 0.0);
        assert!(info_nce(&batch, 0.1, true).unwrap().value > 0.0);
    }

    #[test]
    fn cosent_closed_forms() {
        let pairs = ScoredPairBatch {
            lefts: vec![v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[1.0, 1.0])],
            rights: vec![v(&[1.0, 2.0]), v(&[3.0, 1.0]), v(&[-1.0, 0.5])],
            scores: vec![0.4, 0.4, 0.4],
        };
        assert_eq!(cosent(&pairs, 0.05).unwrap().value, 0.0);

        let equal = ScoredPairBatch {
            lefts: vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])],
            rights: vec![v(&[1.0, 1.0]), v(&[1.0, 1.0])],
            scores: vec![1.0, 0.0],
        };
        assert!((cosent(&equal, 1.0).unwrap().value - 2f64.ln()).abs() < 1e-12);
    }

    fn naive_cosent(b: &ScoredPairBatch, tau: f64) -> f64 {
        let m = b.lefts.len();
        let mut sum = 1.0;
        for i in 0..m {
            for j in 0..m {
                if b.scores[i] > b.scores[j] {
                    let ci = cosine(&b.lefts[i], &b.rights[i]).unwrap();
                    let cj = cosine(&b.lefts[j], &b.rights[j]).unwrap();
                    sum += ((cj - ci) / tau).exp();
                }
            }
        }
        sum.ln()
    }

    #[test]
    fn cosent_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5 {
            let batch = ScoredPairBatch {
                lefts: (0..4).map(|_| rand_vec(&mut rng, 5)).collect(),
                rights: (0..4).map(|_| rand_vec(&mut rng, 5)).collect(),
                scores: vec![0.1, 0.9, 0.5, 0.3],
            };
            for tau in [0.05, 0.3] {
                let got = cosent(&batch, tau).unwrap().value;
                assert!((got - naive_cosent(&batch, tau)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cosent_depends_only_on_score_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = ScoredPairBatch {
            lefts: (0..5).map(|_| rand_vec(&mut rng, 4)).collect(),
            rights: (0..5).map(|_| rand_vec(&mut rng, 4)).collect(),
            scores: vec![0.0, 2.0, 1.0, 4.0, 3.0],
        };
        let base = cosent(&batch, 0.1).unwrap().value;
        let shifted = ScoredPairBatch {
            scores: batch.scores.iter().map(|s| s + 7.5).collect(),
            ..batch.clone()
        };
        assert!((cosent(&shifted, 0.1).unwrap().value - base).abs() < 1e-12);
    }

    #[test]
    fn label_nce_uniform_ten_way_is_ln10() {
        let x = v(&[1.0, 0.0, 0.0]);
        // All labels at the same angle to x.
        let label = |k: f64| v(&[1.0, k.cos(), k.sin()]);
        let batch = LabeledBatch {
            texts: vec![x],
            pos_labels: vec![label(0.0)],
            neg_labels: vec![(1..10).map(|k| label(k as f64)).collect()],
        };
        let out = label_nce(&batch, 0.05).unwrap();
        assert!((out.value - 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn label_nce_confident_is_near_zero() {
        let batch = LabeledBatch {
            texts: vec![v(&[1.0, 0.0])],
            pos_labels: vec![v(&[3.0, 0.0])],
            neg_labels: vec![vec![v(&[-1.0, 0.0]); 9]],
        };
        let want = (1.0 + 9.0 * (-40f64).exp()).ln();
        assert!((label_nce(&batch, 0.05).unwrap().value - want).abs() < 1e-20);
    }

    #[test]
    fn label_nce_has_no_cross_row_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<LabeledBatch> = (0..2)
            .map(|_| LabeledBatch {
                texts: vec![rand_vec(&mut rng, 4)],
                pos_labels: vec![rand_vec(&mut rng, 4)],
                neg_labels: vec![(0..3).map(|_| rand_vec(&mut rng, 4)).collect()],
            })
            .collect();
        let joint = LabeledBatch {
            texts: rows.iter().flat_map(|r| r.texts.clone()).collect(),
            pos_labels: rows.iter().flat_map(|r| r.pos_labels.clone()).collect(),
            neg_labels: rows.iter().flat_map(|r| r.neg_labels.clone()).collect(),
        };
        let mean = rows.iter().map(|r| label_nce(r, 0.1).unwrap().value).sum::<f64>() / 2.0;
        assert!((label_nce(&joint, 0.1).unwrap().value - mean).abs() < 1e-14);
    }

    #[test]
    fn label_nce_errors() {
        let batch = LabeledBatch {
            texts: vec![v(&[1.0])],
            pos_labels: vec![v(&[1.0])],
            neg_labels: vec![vec![]],
        };
        assert!(matches!(label_nce(&batch, 0.1), Err(Error::EmptyNegatives(0))));
        let empty = LabeledBatch {
            texts: vec![],
            pos_labels: vec![],
            neg_labels: vec![],
        };
        assert!(matches!(label_nce(&empty, 0.1), Err(Error::EmptyBatch)));
    }

    #[test]
    fn zero_norm_propagates() {
        let batch = RetrievalBatch {
            queries: vec![v(&[0.0, 0.0])],
            positives: vec![v(&[1.0, 0.0])],
            hard_negatives: vec![vec![]],
        };
        assert!(matches!(info_nce(&batch, 0.1, true), Err(Error::ZeroNorm)));
    }

    #[test]
    fn hybrid_routing() {
        let cfg = LossConfig::default();
        let scored = ScoredPairBatch {
            lefts: vec![v(&[1.0, 0.2]), v(&[0.0, 1.0])],
            rights: vec![v(&[1.0, 1.0]), v(&[0.5, 1.0])],
            scores: vec![1.0, 0.0],
        };
        let routed = hybrid_loss(Task::Sts, &LossBatch::Scored(scored.clone()), &cfg).unwrap();
        assert_eq!(routed, cosent(&scored, cfg.tau_sts).unwrap());

        let labeled = LabeledBatch {
            texts: vec![v(&[1.0, 0.3])],
            pos_labels: vec![v(&[1.0, 1.0])],
            neg_labels: vec![vec![v(&[0.0, 1.0])]],
        };
        let routed = hybrid_loss(Task::Clustering, &LossBatch::Labeled(labeled.clone()), &cfg).unwrap();
        assert_eq!(routed, label_nce(&labeled, cfg.tau_cls).unwrap());

        assert!(matches!(
            hybrid_loss(Task::Retrieval, &LossBatch::Scored(scored), &cfg),
            Err(Error::TaskBatchMismatch { .. })
        ));
    }
}
