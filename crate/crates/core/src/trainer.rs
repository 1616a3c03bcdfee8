//! The training loop: task-homogeneous batches, routed Matryoshka loss,
//! backpropagation through the encoder, AdamW with cosine decay.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::data::{plan_batches, BatchPlan, TaskDataset, TrainExample};
use crate::encoder::{accumulate_backward, encode, EncodeTrace, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::losses::{LabeledBatch, LossBatch, LossConfig, RetrievalBatch, ScoredPairBatch};
use crate::mrl::{mrl_loss, MrlConfig};
use crate::numerics::Vec64;
use crate::optim::{adamw_step, cosine_lr, OptimizerState};
use crate::task::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Floor of the cosine schedule.
    pub lr_min: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Half-width of the uniform initialization.
    pub init_scale: f64,
    /// Hard negatives drawn per retrieval example per step.
    pub negatives_per_example: usize,
    pub mrl: MrlConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            lr_min: 0.0,
            steps: 500,
            batch_size: 32,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            init_scale: 0.05,
            negatives_per_example: 1,
            mrl: MrlConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, encoder: &EncoderConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..=self.lr).contains(&self.lr_min) {
            return bad(format!("lr_min must lie in [0, lr], got {}", self.lr_min));
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall(self.batch_size));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) || !(self.init_scale > 0.0) {
            return bad("eps and init_scale must be > 0, weight_decay >= 0".into());
        }
        self.loss.validate()?;
        self.mrl.validate(encoder.out_dim)
    }
}

/// One row of the loss log, recorded before the update is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub task: Task,
    pub lr: f64,
    pub loss: f64,
}

/// `step,task,lr,loss` with a header line.
pub fn log_to_csv(log: &[StepRecord]) -> String {
    let mut out = String::from("step,task,lr,loss\n");
    for r in log {
        let _ = writeln!(out, "{},{},{:e},{:.17e}", r.step, r.task, r.lr, r.loss);
    }
    out
}

pub fn log_digest(log: &[StepRecord]) -> String {
    let digest = Sha256::digest(log_to_csv(log).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Exponential moving average with smoothing `2 / (window + 1)`.
pub fn smoothed(losses: &[f64], window: usize) -> Vec<f64> {
    let alpha = 2.0 / (window as f64 + 1.0);
    let mut out = Vec::with_capacity(losses.len());
    let mut ema = None;
    for &x in losses {
        let next = match ema {
            None => x,
            Some(prev) => alpha * x + (1.0 - alpha) * prev,
        };
        ema = Some(next);
        out.push(next);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepRecord>,
}

/// Unique texts of one batch plus the loss-batch layout over them.
struct AssembledBatch {
    texts: Vec<String>,
    /// Text index for every vector of the batch, in [`LossBatch::vectors`] order.
    slots: Vec<usize>,
    layout: Layout,
}

enum Layout {
    Retrieval {
        queries: Vec<usize>,
        positives: Vec<usize>,
        negatives: Vec<Vec<usize>>,
    },
    Scored {
        lefts: Vec<usize>,
        rights: Vec<usize>,
        scores: Vec<f64>,
    },
    Labeled {
        texts: Vec<usize>,
        pos: Vec<usize>,
        neg: Vec<Vec<usize>>,
    },
}

#[derive(Default)]
struct Interner {
    texts: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    fn id(&mut self, text: &str) -> usize {
        if let Some(&i) = self.index.get(text) {
            return i;
        }
        self.texts.push(text.to_string());
        self.index.insert(text.to_string(), self.texts.len() - 1);
        self.texts.len() - 1
    }
}

fn assemble(
    examples: &[&TrainExample],
    negatives_per_example: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AssembledBatch> {
    let mut interner = Interner::default();
    let layout = match examples.first() {
        Some(TrainExample::Retrieval { .. }) => {
            let (mut queries, mut positives, mut negatives) = (vec![], vec![], vec![]);
            for ex in examples {
                let TrainExample::Retrieval { query, pos, neg } = ex else {
                    return Err(Error::ShapeMismatch("mixed records in one batch".into()));
                };
                queries.push(interner.id(query));
                let p = pos.choose(rng).ok_or(Error::EmptyBatch)?;
                positives.push(interner.id(p));
                let mut picked: Vec<&String> = neg.iter().collect();
                picked.shuffle(rng);
                picked.truncate(negatives_per_example);
                negatives.push(picked.into_iter().map(|n| interner.id(n)).collect());
            }
            Layout::Retrieval {
                queries,
                positives,
                negatives,
            }
        }
        Some(TrainExample::Scored { .. }) => {
            let (mut lefts, mut rights, mut scores) = (vec![], vec![], vec![]);
            for ex in examples {
                let TrainExample::Scored { text_a, text_b, score } = ex else {
                    return Err(Error::ShapeMismatch("mixed records in one batch".into()));
                };
                lefts.push(interner.id(text_a));
                rights.push(interner.id(text_b));
                scores.push(*score);
            }
            Layout::Scored { lefts, rights, scores }
        }
        Some(TrainExample::Labeled { .. }) => {
            let (mut texts, mut pos, mut neg) = (vec![], vec![], vec![]);
            for ex in examples {
                let TrainExample::Labeled {
                    text,
                    pos_label,
                    neg_labels,
                } = ex
                else {
                    return Err(Error::ShapeMismatch("mixed records in one batch".into()));
                };
                texts.push(interner.id(text));
                pos.push(interner.id(pos_label));
                neg.push(neg_labels.iter().map(|l| interner.id(l)).collect());
            }
            Layout::Labeled { texts, pos, neg }
        }
        None => return Err(Error::EmptyBatch),
    };
    let slots = match &layout {
        Layout::Retrieval {
            queries,
            positives,
            negatives,
        } => queries
            .iter()
            .chain(positives)
            .chain(negatives.iter().flatten())
            .copied()
            .collect(),
        Layout::Scored { lefts, rights, .. } => lefts.iter().chain(rights).copied().collect(),
        Layout::Labeled { texts, pos, neg } => {
            texts.iter().chain(pos).chain(neg.iter().flatten()).copied().collect()
        }
    };
    Ok(AssembledBatch {
        texts: interner.texts,
        slots,
        layout,
    })
}

fn materialize(layout: &Layout, outputs: &[Vec64]) -> LossBatch {
    let pick = |ids: &[usize]| ids.iter().map(|&i| outputs[i].clone()).collect::<Vec<_>>();
    let pick_rows = |rows: &[Vec<usize>]| rows.iter().map(|r| pick(r)).collect::<Vec<_>>();
    match layout {
        Layout::Retrieval {
            queries,
            positives,
            negatives,
        } => LossBatch::Retrieval(RetrievalBatch {
            queries: pick(queries),
            positives: pick(positives),
            hard_negatives: pick_rows(negatives),
        }),
        Layout::Scored { lefts, rights, scores } => LossBatch::Scored(ScoredPairBatch {
            lefts: pick(lefts),
            rights: pick(rights),
            scores: scores.clone(),
        }),
        Layout::Labeled { texts, pos, neg } => LossBatch::Labeled(LabeledBatch {
            texts: pick(texts),
            pos_labels: pick(pos),
            neg_labels: pick_rows(neg),
        }),
    }
}

/// Loss and parameter gradients for one batch of examples.
pub fn batch_loss_and_grads(
    task: Task,
    examples: &[&TrainExample],
    params: &EncoderParams,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    grads: &mut EncoderParams,
) -> Result<f64> {
    let batch = assemble(examples, config.negatives_per_example, rng)?;
    let traces: Vec<EncodeTrace> = batch
        .texts
        .iter()
        .map(|t| encode(t, params, encoder))
        .collect::<Result<_>>()?;
    let outputs: Vec<Vec64> = traces.iter().map(|t| t.output.clone()).collect();
    let loss_batch = materialize(&batch.layout, &outputs);
    let out = mrl_loss(task, &loss_batch, &config.mrl, &config.loss)?;

    let mut per_text: Vec<Vec64> = outputs.iter().map(|o| Vec64::zeros(o.len())).collect();
    for (&slot, g) in batch.slots.iter().zip(out.grads.vectors()) {
        per_text[slot].add_scaled(1.0, g);
    }
    grads.fill_zero();
    for (trace, g) in traces.iter().zip(&per_text) {
        accumulate_backward(trace, g, params, grads)?;
    }
    Ok(out.value)
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(step as u64).to_le_bytes());
    key[16..20].copy_from_slice(b"step");
    ChaCha8Rng::from_seed(key)
}

/// Trains an encoder from a seeded uniform initialization.
pub fn train(datasets: &[TaskDataset], encoder: &EncoderConfig, config: &TrainConfig) -> Result<TrainOutput> {
    encoder.validate()?;
    config.validate(encoder)?;
    let params = EncoderParams::init_uniform(encoder, config.seed, config.init_scale);
    train_from(datasets, encoder, config, params)
}

/// Trains starting from the given parameters.
pub fn train_from(
    datasets: &[TaskDataset],
    encoder: &EncoderConfig,
    config: &TrainConfig,
    mut params: EncoderParams,
) -> Result<TrainOutput> {
    encoder.validate()?;
    config.validate(encoder)?;
    params.check_shapes(encoder)?;
    for ds in datasets {
        // Re-validates records that were built in memory.
        TaskDataset::new(ds.task, ds.examples.clone())?;
    }

    let mut state = OptimizerState::new(&params);
    let mut grads = EncoderParams::zeros(encoder);
    let mut log = Vec::with_capacity(config.steps);
    let mut epoch = 0u64;
    let mut plan: BatchPlan = plan_batches(datasets, config.batch_size, config.seed)?;
    let mut cursor = 0;

    for step in 0..config.steps {
        if cursor == plan.schedule.len() {
            epoch += 1;
            plan = plan_batches(datasets, config.batch_size, config.seed.wrapping_add(epoch))?;
            cursor = 0;
        }
        let planned = &plan.schedule[cursor];
        cursor += 1;
        let ds = &datasets[planned.dataset];
        let examples: Vec<&TrainExample> = planned.indices.iter().map(|&i| &ds.examples[i]).collect();
        let lr = cosine_lr(step, config.steps, config.lr, config.lr_min);
        let mut rng = step_rng(config.seed, step);
        let loss = batch_loss_and_grads(ds.task, &examples, &params, encoder, config, &mut rng, &mut grads)?;
        if !loss.is_finite() {
            return Err(Error::AbortOnNonFinite {
                step,
                task: ds.task.to_string(),
            });
        }
        log.push(StepRecord {
            step,
            task: ds.task,
            lr,
            loss,
        });
        adamw_step(&mut params, &grads, &mut state, lr, config)?;
    }

    let checkpoint = Checkpoint::new(
        encoder.clone(),
        config.mrl.clone(),
        state.step,
        log_digest(&log),
        params,
    )?;
    Ok(TrainOutput { checkpoint, log })
}
