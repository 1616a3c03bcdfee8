//! Multi-task hybrid contrastive training for a small hashed n-gram text
//! encoder.
//!
//! Retrieval batches train with in-batch InfoNCE, scored pairs with CoSENT,
//! and classification or clustering texts against their label names with a
//! label-only InfoNCE. Every loss can be evaluated over nested embedding
//! prefixes (Matryoshka training). Around the losses sit a trainer with AdamW
//! and cosine decay, hard-negative mining, a synthetic-data prompt pipeline,
//! and a six-task evaluation harness.

// `!(x > 0.0)` also rejects NaN; rows are indexed across parallel arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ablation;
pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod mining;
pub mod mrl;
pub mod numerics;
pub mod optim;
pub mod synth;
pub mod task;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
pub use task::Task;
