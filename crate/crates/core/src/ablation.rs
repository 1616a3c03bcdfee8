//! Loss-variant ablations.
//!
//! The full hybrid objective routes each task to its own loss. The reduced
//! variants rewrite training sets so that more tasks fall back to InfoNCE:
//!
//! - [`LossVariant::InfoNceOnly`]: every set becomes retrieval triplets.
//! - [`LossVariant::InfoNceCosent`]: scored pairs keep CoSENT, labeled sets
//!   become retrieval triplets.
//! - [`LossVariant::Hybrid`]: sets are used as given.
//!
//! Labeled texts become queries whose positives are other texts with the same
//! label, with only in-batch negatives. Scored pairs are grouped by their
//! first text; partners scoring at or above the dataset's midpoint become
//! positives and the rest hard negatives.
//!
//! [`run_ablation`] fine-tunes every variant from one shared base trained
//! with InfoNCE on the retrieval sets alone, so variants differ only in how
//! the remaining tasks are learned.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{TaskDataset, TrainExample};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{eval_all, EvalDataset, EvalReport};
use crate::task::Task;
use crate::trainer::{train, train_from, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    InfoNceOnly,
    InfoNceCosent,
    Hybrid,
}

impl LossVariant {
    pub const ALL: [LossVariant; 3] = [LossVariant::InfoNceOnly, LossVariant::InfoNceCosent, LossVariant::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::InfoNceOnly => "info_nce_only",
            LossVariant::InfoNceCosent => "info_nce_cosent",
            LossVariant::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss variant `{s}`")))
    }
}

/// Labeled examples as retrieval triplets over same-label texts.
pub fn labeled_to_retrieval(ds: &TaskDataset) -> Result<TaskDataset> {
    let mut by_label: HashMap<&str, Vec<&str>> = HashMap::new();
    for ex in &ds.examples {
        if let TrainExample::Labeled { text, pos_label, .. } = ex {
            by_label.entry(pos_label).or_default().push(text);
        }
    }
    let examples: Vec<TrainExample> = ds
        .examples
        .iter()
        .filter_map(|ex| {
            let TrainExample::Labeled { text, pos_label, .. } = ex else {
                return None;
            };
            let pos: Vec<String> = by_label[pos_label.as_str()]
                .iter()
                .filter(|t| **t != text)
                .map(|t| t.to_string())
                .collect();
            (!pos.is_empty()).then(|| TrainExample::Retrieval {
                query: text.clone(),
                pos,
                neg: vec![],
            })
        })
        .collect();
    TaskDataset::new(Task::Retrieval, examples)
}

/// Scored pairs as retrieval triplets split at the score midpoint.
pub fn scored_to_retrieval(ds: &TaskDataset) -> Result<TaskDataset> {
    let scores: Vec<f64> = ds
        .examples
        .iter()
        .filter_map(|ex| match ex {
            TrainExample::Scored { score, .. } => Some(*score),
            _ => None,
        })
        .collect();
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mid = 0.5 * (lo + hi);

    let mut order: Vec<&str> = vec![];
    let mut groups: HashMap<&str, (Vec<String>, Vec<String>)> = HashMap::new();
    for ex in &ds.examples {
        if let TrainExample::Scored { text_a, text_b, score } = ex {
            let g = groups.entry(text_a).or_insert_with(|| {
                order.push(text_a);
                (vec![], vec![])
            });
            if *score >= mid {
                g.0.push(text_b.clone());
            } else {
                g.1.push(text_b.clone());
            }
        }
    }
    let examples: Vec<TrainExample> = order
        .into_iter()
        .filter_map(|a| {
            let (pos, neg) = groups.remove(a).expect("grouped");
            (!pos.is_empty()).then(|| TrainExample::Retrieval {
                query: a.to_string(),
                pos,
                neg,
            })
        })
        .collect();
    TaskDataset::new(Task::Retrieval, examples)
}

/// Rewrites training sets for `variant`.
pub fn apply_variant(datasets: &[TaskDataset], variant: LossVariant) -> Result<Vec<TaskDataset>> {
    datasets
        .iter()
        .map(|ds| {
            let scored = matches!(ds.task, Task::Sts | Task::PairClassification);
            let labeled = matches!(ds.task, Task::Classification | Task::Clustering);
            match variant {
                LossVariant::InfoNceOnly if scored => scored_to_retrieval(ds),
                LossVariant::InfoNceOnly | LossVariant::InfoNceCosent if labeled => labeled_to_retrieval(ds),
                _ => Ok(ds.clone()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Used as is for the base run.
    pub train: TrainConfig,
    /// Peak lr of every fine-tuning run; everything else comes from `train`.
    pub finetune_lr: f64,
    pub eval_dim: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            finetune_lr: 5e-4,
            eval_dim: 128,
        }
    }
}

/// Trains the shared base on the retrieval sets of `datasets`.
pub fn train_base(datasets: &[TaskDataset], encoder: &EncoderConfig, config: &AblationConfig) -> Result<Checkpoint> {
    let retrieval: Vec<TaskDataset> = datasets.iter().filter(|d| d.task == Task::Retrieval).cloned().collect();
    if retrieval.is_empty() {
        return Err(Error::InvalidConfig("ablation base needs a retrieval training set".into()));
    }
    Ok(train(&retrieval, encoder, &config.train)?.checkpoint)
}

/// Fine-tunes `base` on `datasets` rewritten for `variant`.
pub fn finetune_variant(
    datasets: &[TaskDataset],
    encoder: &EncoderConfig,
    config: &AblationConfig,
    base: &Checkpoint,
    variant: LossVariant,
) -> Result<Checkpoint> {
    let data = apply_variant(datasets, variant)?;
    let cfg = TrainConfig {
        lr: config.finetune_lr,
        lr_min: config.train.lr_min.min(config.finetune_lr),
        ..config.train.clone()
    };
    Ok(train_from(&data, encoder, &cfg, base.params.clone())?.checkpoint)
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub base: EvalReport,
    pub variants: Vec<(LossVariant, EvalReport)>,
}

impl AblationRun {
    pub fn average(&self, variant: LossVariant) -> Option<f64> {
        self.variants.iter().find(|(v, _)| *v == variant).map(|(_, r)| r.average_points())
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<16} {}\n", "variant", EvalReport::table_header());
        out += &format!("{:<16} {}\n", "base", self.base.table_row());
        for (v, r) in &self.variants {
            out += &format!("{:<16} {}\n", v.as_str(), r.table_row());
        }
        out
    }
}

/// Base run, then one fine-tune per variant, each evaluated on `suite`.
pub fn run_ablation(
    datasets: &[TaskDataset],
    encoder: &EncoderConfig,
    config: &AblationConfig,
    suite: &[EvalDataset],
) -> Result<AblationRun> {
    let base = train_base(datasets, encoder, config)?;
    let base_report = eval_all(&base.encoder()?, suite, config.eval_dim)?;
    let variants = LossVariant::ALL
        .into_iter()
        .map(|v| {
            let ckpt = finetune_variant(datasets, encoder, config, &base, v)?;
            Ok((v, eval_all(&ckpt.encoder()?, suite, config.eval_dim)?))
        })
        .collect::<Result<_>>()?;
    Ok(AblationRun {
        base: base_report,
        variants,
    })
}
