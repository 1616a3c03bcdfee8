use std::collections::HashSet;

use mtembed::checkpoint::Checkpoint;
use mtembed::data::{parse_jsonl, TaskDataset, TrainExample};
use mtembed::encoder::{EncoderConfig, EncoderParams};
use mtembed::eval::{ndcg_at_k, spearman, v_measure};
use mtembed::losses::{cosent, info_nce, label_nce, LabeledBatch, RetrievalBatch, ScoredPairBatch};
use mtembed::mining::{mine_negatives, rank_corpus, MiningConfig};
use mtembed::mrl::prefix;
use mtembed::numerics::{cosine, Vec64};
use mtembed::mrl::MrlConfig;
use mtembed::Task;
use proptest::prelude::*;

fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec64> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(Vec64::from)
}

fn vecs(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec64>> {
    prop::collection::vec(vec_strategy(dim), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_is_bounded_and_symmetric(a in vec_strategy(6), b in vec_strategy(6)) {
        let ab = cosine(&a, &b).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
        prop_assert_eq!(ab, cosine(&b, &a).unwrap());
    }

    #[test]
    fn losses_are_non_negative(
        q in vecs(3, 5), p in vecs(3, 5), n in vecs(3, 5),
        scores in prop::collection::vec(0.0f64..5.0, 3),
    ) {
        let r = RetrievalBatch {
            queries: q.clone(),
            positives: p.clone(),
            hard_negatives: n.iter().map(|v| vec![v.clone()]).collect(),
        };
        prop_assert!(info_nce(&r, 0.05, true).unwrap().value >= 0.0);
        let s = ScoredPairBatch { lefts: q.clone(), rights: p.clone(), scores };
        prop_assert!(cosent(&s, 0.05).unwrap().value >= 0.0);
        let l = LabeledBatch { texts: q, pos_labels: p, neg_labels: n.iter().map(|v| vec![v.clone()]).collect() };
        prop_assert!(label_nce(&l, 0.05).unwrap().value >= 0.0);
    }

    #[test]
    fn prefixes_nest(v in prop::collection::vec(-1.0f64..1.0, 16), a in 1usize..=16, b in 1usize..=16) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert_eq!(prefix(&prefix(&v, hi).unwrap(), lo).unwrap(), prefix(&v, lo).unwrap());
    }

    #[test]
    fn mined_negatives_respect_window_and_gold(
        corpus in vecs(120, 4),
        q in vec_strategy(4),
        gold in prop::collection::hash_set(0usize..120, 0..10),
        seed in any::<u64>(),
    ) {
        let cfg = MiningConfig { seed, ..MiningConfig::default() };
        let ranked = rank_corpus(&q, &corpus).unwrap();
        let picks = mine_negatives(&q, &corpus, &gold, &cfg).unwrap();
        prop_assert!(picks.len() <= 15);
        for p in &picks {
            let rank = ranked.iter().position(|x| x == p).unwrap() + 1;
            prop_assert!((50..=100).contains(&rank));
            prop_assert!(!gold.contains(p));
        }
        prop_assert_eq!(&picks, &mine_negatives(&q, &corpus, &gold, &cfg).unwrap());
    }

    #[test]
    fn spearman_ignores_monotone_transforms(x in prop::collection::vec(-10.0f64..10.0, 3..30)) {
        let y: Vec<f64> = x.iter().map(|v| v * v * v + 2.0 * v).collect();
        if let Ok(r) = spearman(&x, &y) {
            prop_assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn v_measure_ignores_label_names(gold in prop::collection::vec(0usize..4, 2..40), pred in prop::collection::vec(0usize..4, 40)) {
        let pred = &pred[..gold.len()];
        let renamed: Vec<usize> = pred.iter().map(|p| 100 - p).collect();
        let a = v_measure(&gold, pred);
        prop_assert!((a - v_measure(&gold, &renamed)).abs() < 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn ndcg_is_a_fraction(perm in Just((0..20).collect::<Vec<usize>>()).prop_shuffle(), rel in prop::collection::hash_set(0usize..20, 1..5)) {
        let score = ndcg_at_k(&perm, &rel, 10);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&score));
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>()) {
        let config = EncoderConfig { vocab_size: 64, hidden_dim: 8, out_dim: 16, ..EncoderConfig::default() };
        let params = EncoderParams::init_uniform(&config, seed, 0.1);
        let ckpt = Checkpoint::new(config, MrlConfig::uniform(vec![4, 16]), 3, "x".into(), params).unwrap();
        prop_assert_eq!(Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap(), ckpt);
    }

    #[test]
    fn retrieval_jsonl_round_trips(
        rows in prop::collection::vec(("[a-z ]{1,12}[a-z]", prop::collection::vec("[a-z]{1,8}", 1..3), prop::collection::vec("\\PC{1,8}", 0..3)), 1..6)
    ) {
        let examples: Vec<TrainExample> = rows
            .into_iter()
            .filter(|(_, _, neg)| neg.iter().all(|n| !n.trim().is_empty()))
            .map(|(query, pos, neg)| TrainExample::Retrieval { query, pos, neg })
            .collect();
        prop_assume!(!examples.is_empty());
        let ds = TaskDataset::new(Task::Retrieval, examples).unwrap();
        prop_assert_eq!(parse_jsonl(&ds.to_jsonl()).unwrap(), ds);
    }
}

#[test]
fn window_excludes_gold_before_sampling() {
    let corpus: Vec<Vec64> = (0..60).map(|i| Vec64::from(vec![1.0, i as f64 / 10.0])).collect();
    let q = [1.0, 0.0];
    let ranked = rank_corpus(&q, &corpus).unwrap();
    let gold: HashSet<usize> = ranked[49..59].iter().copied().collect();
    let picks = mine_negatives(&q, &corpus, &gold, &MiningConfig::default()).unwrap();
    assert_eq!(picks, vec![ranked[59]]);
}
