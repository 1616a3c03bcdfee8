//! Training records, their JSONL encoding, the label-triplet reformatting of
//! classification data, and task-homogeneous batch planning.
//!
//! One JSON object per line:
//!
//! ```text
//! retrieval / reranking:          {"task":"retrieval","query":s,"pos":[s..],"neg":[s..]}
//! sts / pair_classification:      {"task":"sts","text_a":s,"text_b":s,"score":x}
//! classification / clustering:    {"task":"classification","text":s,"pos_label":s,"neg_labels":[s..]}
//! ```
//!
//! Unknown fields are rejected.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::task::Task;

#[derive(Debug, Clone, PartialEq)]
pub enum TrainExample {
    Retrieval {
        query: String,
        pos: Vec<String>,
        neg: Vec<String>,
    },
    Scored {
        text_a: String,
        text_b: String,
        score: f64,
    },
    Labeled {
        text: String,
        pos_label: String,
        neg_labels: Vec<String>,
    },
}

/// Which record shape a task trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleKind {
    Retrieval,
    Scored,
    Labeled,
}

impl ExampleKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Retrieval | Task::Reranking => ExampleKind::Retrieval,
            Task::Sts | Task::PairClassification => ExampleKind::Scored,
            Task::Classification | Task::Clustering => ExampleKind::Labeled,
        }
    }
}

impl TrainExample {
    pub fn kind(&self) -> ExampleKind {
        match self {
            TrainExample::Retrieval { .. } => ExampleKind::Retrieval,
            TrainExample::Scored { .. } => ExampleKind::Scored,
            TrainExample::Labeled { .. } => ExampleKind::Labeled,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        fn text(field: &'static str, s: &str) -> std::result::Result<(), (&'static str, String)> {
            if s.trim().is_empty() {
                Err((field, "must be a non-empty string".into()))
            } else {
                Ok(())
            }
        }
        match self {
            TrainExample::Retrieval { query, pos, neg } => {
                text("query", query)?;
                if pos.is_empty() {
                    return Err(("pos", "needs at least one positive".into()));
                }
                pos.iter().try_for_each(|s| text("pos", s))?;
                neg.iter().try_for_each(|s| text("neg", s))
            }
            TrainExample::Scored { text_a, text_b, score } => {
                text("text_a", text_a)?;
                text("text_b", text_b)?;
                if !score.is_finite() {
                    return Err(("score", "must be finite".into()));
                }
                Ok(())
            }
            TrainExample::Labeled {
                text: t,
                pos_label,
                neg_labels,
            } => {
                text("text", t)?;
                text("pos_label", pos_label)?;
                if neg_labels.is_empty() {
                    return Err(("neg_labels", "needs at least one negative label".into()));
                }
                neg_labels.iter().try_for_each(|s| text("neg_labels", s))
            }
        }
    }

    /// The JSONL object for this record under `task`.
    pub fn to_json(&self, task: Task) -> Value {
        match self {
            TrainExample::Retrieval { query, pos, neg } => {
                json!({"task": task, "query": query, "pos": pos, "neg": neg})
            }
            TrainExample::Scored { text_a, text_b, score } => {
                json!({"task": task, "text_a": text_a, "text_b": text_b, "score": score})
            }
            TrainExample::Labeled {
                text,
                pos_label,
                neg_labels,
            } => json!({"task": task, "text": text, "pos_label": pos_label, "neg_labels": neg_labels}),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task: Task,
    pub examples: Vec<TrainExample>,
}

impl TaskDataset {
    pub fn new(task: Task, examples: Vec<TrainExample>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let want = ExampleKind::for_task(task);
        for (i, ex) in examples.iter().enumerate() {
            if ex.kind() != want {
                return Err(Error::SchemaError {
                    line: i + 1,
                    field: "task".into(),
                    message: format!("{task} dataset holds a {:?} record", ex.kind()),
                });
            }
            ex.validate().map_err(|(field, message)| Error::SchemaError {
                line: i + 1,
                field: field.into(),
                message,
            })?;
        }
        Ok(Self { task, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// One JSON object per line, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&ex.to_json(self.task).to_string());
            out.push('\n');
        }
        out
    }
}

fn schema(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::SchemaError {
        line,
        field: field.into(),
        message: message.into(),
    }
}

fn take_string(obj: &Map<String, Value>, line: usize, field: &str) -> Result<String> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(schema(line, field, "expected a string")),
        None => Err(schema(line, field, "missing")),
    }
}

fn take_strings(obj: &Map<String, Value>, line: usize, field: &str) -> Result<Vec<String>> {
    match obj.get(field) {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                _ => Err(schema(line, field, "expected an array of strings")),
            })
            .collect(),
        Some(_) => Err(schema(line, field, "expected an array of strings")),
        None => Err(schema(line, field, "missing")),
    }
}

fn take_number(obj: &Map<String, Value>, line: usize, field: &str) -> Result<f64> {
    match obj.get(field) {
        Some(v) => v
            .as_f64()
            .ok_or_else(|| schema(line, field, "expected a number")),
        None => Err(schema(line, field, "missing")),
    }
}

/// Rejects any key outside `allowed`.
pub(crate) fn check_fields(obj: &Map<String, Value>, line: usize, allowed: &[&str]) -> Result<()> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(schema(line, k, "unknown field")),
        None => Ok(()),
    }
}

/// Parses the `"task"` key of a JSON line.
pub(crate) fn parse_task(obj: &Map<String, Value>, line: usize) -> Result<Task> {
    take_string(obj, line, "task")?
        .parse()
        .map_err(|e: String| schema(line, "task", e))
}

pub(crate) fn parse_object(raw: &str, line: usize) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(raw) {
        Ok(Value::Object(obj)) => Ok(obj),
        Ok(_) => Err(Error::ParseError {
            line,
            message: "expected a JSON object".into(),
        }),
        Err(e) => Err(Error::ParseError {
            line,
            message: e.to_string(),
        }),
    }
}

/// Parses one JSONL line into its task and record.
pub fn parse_example_line(raw: &str, line: usize) -> Result<(Task, TrainExample)> {
    let obj = parse_object(raw, line)?;
    let task = parse_task(&obj, line)?;
    let example = match ExampleKind::for_task(task) {
        ExampleKind::Retrieval => {
            check_fields(&obj, line, &["task", "query", "pos", "neg"])?;
            TrainExample::Retrieval {
                query: take_string(&obj, line, "query")?,
                pos: take_strings(&obj, line, "pos")?,
                neg: take_strings(&obj, line, "neg")?,
            }
        }
        ExampleKind::Scored => {
            check_fields(&obj, line, &["task", "text_a", "text_b", "score"])?;
            TrainExample::Scored {
                text_a: take_string(&obj, line, "text_a")?,
                text_b: take_string(&obj, line, "text_b")?,
                score: take_number(&obj, line, "score")?,
            }
        }
        ExampleKind::Labeled => {
            check_fields(&obj, line, &["task", "text", "pos_label", "neg_labels"])?;
            TrainExample::Labeled {
                text: take_string(&obj, line, "text")?,
                pos_label: take_string(&obj, line, "pos_label")?,
                neg_labels: take_strings(&obj, line, "neg_labels")?,
            }
        }
    };
    example
        .validate()
        .map_err(|(field, message)| schema(line, field, message))?;
    Ok((task, example))
}

/// Parses a whole JSONL document. Blank lines are skipped; every record
/// must carry the same task.
pub fn parse_jsonl(content: &str) -> Result<TaskDataset> {
    let mut task = None;
    let mut examples = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let (t, ex) = parse_example_line(raw, line)?;
        match task {
            None => task = Some(t),
            Some(first) if first != t => {
                return Err(schema(line, "task", format!("mixes {t} into a {first} file")));
            }
            _ => {}
        }
        examples.push(ex);
    }
    match task {
        Some(task) => Ok(TaskDataset { task, examples }),
        None => Err(Error::EmptyDataset),
    }
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<TaskDataset> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&content)
}

/// Turns `(text, label)` pairs into label triplets: the text's own label is
/// the positive, every other label in `label_set` a negative, in set order.
pub fn reformat_labeled(texts: &[(String, String)], label_set: &[String]) -> Result<Vec<TrainExample>> {
    if label_set.len() < 2 {
        return Err(Error::DegenerateLabelSet(label_set.len()));
    }
    texts
        .iter()
        .map(|(text, label)| {
            if !label_set.contains(label) {
                return Err(Error::UnknownLabel(label.clone()));
            }
            Ok(TrainExample::Labeled {
                text: text.clone(),
                pos_label: label.clone(),
                neg_labels: label_set.iter().filter(|l| *l != label).cloned().collect(),
            })
        })
        .collect()
}

/// One single-task batch: which dataset it draws from and which examples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedBatch {
    pub dataset: usize,
    pub task: Task,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub schedule: Vec<PlannedBatch>,
    pub batch_size: usize,
    pub seed: u64,
}

fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Shuffles each dataset, cuts it into single-task batches (a trailing
/// partial batch is kept when it has at least two examples), and interleaves
/// the batches in proportion to each dataset's batch count.
pub fn plan_batches(datasets: &[TaskDataset], batch_size: usize, seed: u64) -> Result<BatchPlan> {
    if batch_size < 2 {
        return Err(Error::BatchTooSmall(batch_size));
    }
    if datasets.is_empty() || datasets.iter().any(|d| d.is_empty()) {
        return Err(Error::EmptyDataset);
    }

    let mut per_dataset: Vec<Vec<Vec<usize>>> = Vec::with_capacity(datasets.len());
    for (d, ds) in datasets.iter().enumerate() {
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, d as u64 + 1)));
        per_dataset.push(
            order
                .chunks(batch_size)
                .filter(|c| c.len() >= 2)
                .map(<[usize]>::to_vec)
                .collect(),
        );
    }

    // Stride scheduling: batch b of a dataset with c batches sits at
    // (b + 0.5) / c on [0, 1); ties go to a seeded dataset order.
    let mut rank: Vec<usize> = (0..datasets.len()).collect();
    rank.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 0)));
    let mut slots: Vec<(f64, usize, usize)> = Vec::new();
    for (d, batches) in per_dataset.iter().enumerate() {
        let c = batches.len() as f64;
        for b in 0..batches.len() {
            slots.push(((b as f64 + 0.5) / c, rank[d], d));
        }
    }
    slots.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));

    let mut cursors = vec![0usize; datasets.len()];
    let schedule = slots
        .into_iter()
        .map(|(_, _, d)| {
            let indices = per_dataset[d][cursors[d]].clone();
            cursors[d] += 1;
            PlannedBatch {
                dataset: d,
                task: datasets[d].task,
                indices,
            }
        })
        .collect();
    Ok(BatchPlan {
        schedule,
        batch_size,
        seed,
    })
}
