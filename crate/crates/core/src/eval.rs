//! Six-task evaluation harness.
//!
//! | task                | metric                                             |
//! |---------------------|----------------------------------------------------|
//! | classification      | nearest-centroid accuracy (train split → test)     |
//! | clustering          | V-measure of k-means (k = #gold clusters)          |
//! | pair classification | accuracy at the best cosine threshold              |
//! | reranking           | MAP over each query's candidate list               |
//! | retrieval           | binary nDCG@10 over the full corpus                |
//! | sts                 | Spearman correlation of cosine vs gold score       |
//!
//! Embeddings are cut to `eval_dim` before scoring, and everything is
//! cosine-based, so the report for a given `eval_dim` is unaffected by
//! rescaling embeddings.
//!
//! Eval files are JSONL, one dataset per file:
//!
//! ```text
//! classification:      {"task":"classification","text":s,"label":s,"split":"train"|"test"}
//! clustering:          {"task":"clustering","text":s,"label":s}
//! pair_classification: {"task":"pair_classification","text_a":s,"text_b":s,"label":0|1}
//! sts:                 {"task":"sts","text_a":s,"text_b":s,"score":x}
//! retrieval:           {"task":"retrieval","doc_id":s,"text":s}
//!                      {"task":"retrieval","query":s,"relevant":[doc_id..]}
//! reranking:           {"task":"reranking","query":s,"positive":[s..],"negative":[s..]}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{check_fields, parse_object, parse_task};
use crate::encoder::Embedder;
use crate::error::{Error, Result};
use crate::mining::rank_corpus;
use crate::mrl::prefix;
use crate::numerics::{cosine, norm, Vec64};
use crate::task::Task;

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_SEED: u64 = 42;
pub const RETRIEVAL_K: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct RerankQuery {
    pub query: String,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalRecords {
    Classification {
        train: Vec<(String, String)>,
        test: Vec<(String, String)>,
    },
    Clustering {
        items: Vec<(String, String)>,
    },
    PairClassification {
        pairs: Vec<(String, String, bool)>,
    },
    Reranking {
        queries: Vec<RerankQuery>,
    },
    Retrieval {
        /// `(doc_id, text)`
        corpus: Vec<(String, String)>,
        /// `(query, relevant doc_ids)`
        queries: Vec<(String, Vec<String>)>,
    },
    Sts {
        pairs: Vec<(String, String, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalDataset {
    pub name: String,
    pub records: EvalRecords,
}

impl EvalDataset {
    pub fn task(&self) -> Task {
        match self.records {
            EvalRecords::Classification { .. } => Task::Classification,
            EvalRecords::Clustering { .. } => Task::Clustering,
            EvalRecords::PairClassification { .. } => Task::PairClassification,
            EvalRecords::Reranking { .. } => Task::Reranking,
            EvalRecords::Retrieval { .. } => Task::Retrieval,
            EvalRecords::Sts { .. } => Task::Sts,
        }
    }

    pub fn to_jsonl(&self) -> String {
        let task = self.task();
        let lines: Vec<Value> = match &self.records {
            EvalRecords::Classification { train, test } => train
                .iter()
                .map(|r| (r, "train"))
                .chain(test.iter().map(|r| (r, "test")))
                .map(|((text, label), split)| json!({"task": task, "text": text, "label": label, "split": split}))
                .collect(),
            EvalRecords::Clustering { items } => items
                .iter()
                .map(|(text, label)| json!({"task": task, "text": text, "label": label}))
                .collect(),
            EvalRecords::PairClassification { pairs } => pairs
                .iter()
                .map(|(a, b, l)| json!({"task": task, "text_a": a, "text_b": b, "label": u8::from(*l)}))
                .collect(),
            EvalRecords::Reranking { queries } => queries
                .iter()
                .map(|q| json!({"task": task, "query": q.query, "positive": q.positive, "negative": q.negative}))
                .collect(),
            EvalRecords::Retrieval { corpus, queries } => corpus
                .iter()
                .map(|(id, text)| json!({"task": task, "doc_id": id, "text": text}))
                .chain(
                    queries
                        .iter()
                        .map(|(q, rel)| json!({"task": task, "query": q, "relevant": rel})),
                )
                .collect(),
            EvalRecords::Sts { pairs } => pairs
                .iter()
                .map(|(a, b, s)| json!({"task": task, "text_a": a, "text_b": b, "score": s}))
                .collect(),
        };
        lines.into_iter().map(|v| v.to_string() + "\n").collect()
    }
}

fn field_err(line: usize, field: &str, message: &str) -> Error {
    Error::SchemaError {
        line,
        field: field.into(),
        message: message.into(),
    }
}

fn str_field(obj: &serde_json::Map<String, Value>, line: usize, field: &str) -> Result<String> {
    match obj.get(field) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(_) => Err(field_err(line, field, "expected a non-empty string")),
        None => Err(field_err(line, field, "missing")),
    }
}

fn list_field(obj: &serde_json::Map<String, Value>, line: usize, field: &str) -> Result<Vec<String>> {
    let items = obj
        .get(field)
        .ok_or_else(|| field_err(line, field, "missing"))?
        .as_array()
        .ok_or_else(|| field_err(line, field, "expected an array of strings"))?;
    items
        .iter()
        .map(|v| match v {
            Value::String(s) if !s.trim().is_empty() => Ok(s.clone()),
            _ => Err(field_err(line, field, "expected an array of non-empty strings")),
        })
        .collect()
}

fn num_field(obj: &serde_json::Map<String, Value>, line: usize, field: &str) -> Result<f64> {
    obj.get(field)
        .ok_or_else(|| field_err(line, field, "missing"))?
        .as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| field_err(line, field, "expected a finite number"))
}

/// Parses one eval dataset from JSONL text.
pub fn parse_eval_jsonl(name: &str, content: &str) -> Result<EvalDataset> {
    let mut task: Option<Task> = None;
    let mut cls_train = vec![];
    let mut cls_test = vec![];
    let mut items = vec![];
    let mut pairs = vec![];
    let mut scored = vec![];
    let mut rerank = vec![];
    let mut corpus: Vec<(String, String)> = vec![];
    let mut queries: Vec<(String, Vec<String>, usize)> = vec![];

    for (i, raw) in content.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let obj = parse_object(raw, line)?;
        let t = parse_task(&obj, line)?;
        match task {
            None => task = Some(t),
            Some(first) if first != t => {
                return Err(field_err(line, "task", &format!("mixes {t} into a {first} file")));
            }
            _ => {}
        }
        match t {
            Task::Classification => {
                check_fields(&obj, line, &["task", "text", "label", "split"])?;
                let rec = (str_field(&obj, line, "text")?, str_field(&obj, line, "label")?);
                match str_field(&obj, line, "split")?.as_str() {
                    "train" => cls_train.push(rec),
                    "test" => cls_test.push(rec),
                    _ => return Err(field_err(line, "split", "expected \"train\" or \"test\"")),
                }
            }
            Task::Clustering => {
                check_fields(&obj, line, &["task", "text", "label"])?;
                items.push((str_field(&obj, line, "text")?, str_field(&obj, line, "label")?));
            }
            Task::PairClassification => {
                check_fields(&obj, line, &["task", "text_a", "text_b", "label"])?;
                let label = match num_field(&obj, line, "label")? {
                    0.0 => false,
                    1.0 => true,
                    _ => return Err(field_err(line, "label", "expected 0 or 1")),
                };
                pairs.push((str_field(&obj, line, "text_a")?, str_field(&obj, line, "text_b")?, label));
            }
            Task::Sts => {
                check_fields(&obj, line, &["task", "text_a", "text_b", "score"])?;
                scored.push((
                    str_field(&obj, line, "text_a")?,
                    str_field(&obj, line, "text_b")?,
                    num_field(&obj, line, "score")?,
                ));
            }
            Task::Reranking => {
                check_fields(&obj, line, &["task", "query", "positive", "negative"])?;
                rerank.push(RerankQuery {
                    query: str_field(&obj, line, "query")?,
                    positive: list_field(&obj, line, "positive")?,
                    negative: list_field(&obj, line, "negative")?,
                });
            }
            Task::Retrieval => {
                if obj.contains_key("doc_id") {
                    check_fields(&obj, line, &["task", "doc_id", "text"])?;
                    corpus.push((str_field(&obj, line, "doc_id")?, str_field(&obj, line, "text")?));
                } else {
                    check_fields(&obj, line, &["task", "query", "relevant"])?;
                    queries.push((str_field(&obj, line, "query")?, list_field(&obj, line, "relevant")?, line));
                }
            }
        }
    }

    let records = match task.ok_or(Error::EmptyDataset)? {
        Task::Classification => EvalRecords::Classification {
            train: cls_train,
            test: cls_test,
        },
        Task::Clustering => EvalRecords::Clustering { items },
        Task::PairClassification => EvalRecords::PairClassification { pairs },
        Task::Sts => EvalRecords::Sts { pairs: scored },
        Task::Reranking => EvalRecords::Reranking { queries: rerank },
        Task::Retrieval => {
            let ids: HashSet<&str> = corpus.iter().map(|(id, _)| id.as_str()).collect();
            if ids.len() != corpus.len() {
                return Err(field_err(0, "doc_id", "duplicate document ids"));
            }
            for (_, rel, line) in &queries {
                if let Some(bad) = rel.iter().find(|r| !ids.contains(r.as_str())) {
                    return Err(field_err(*line, "relevant", &format!("unknown doc_id `{bad}`")));
                }
            }
            EvalRecords::Retrieval {
                corpus,
                queries: queries.into_iter().map(|(q, r, _)| (q, r)).collect(),
            }
        }
    };
    Ok(EvalDataset {
        name: name.to_string(),
        records,
    })
}

pub fn load_eval_jsonl(path: impl AsRef<Path>) -> Result<EvalDataset> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_eval_jsonl(&name, &content)
}

// ---------------------------------------------------------------------------
// Metrics on precomputed vectors and scores.

fn unit(v: &[f64]) -> Result<Vec64> {
    let n = norm(v);
    if n < crate::numerics::MIN_NORM {
        return Err(Error::ZeroNorm);
    }
    Ok(Vec64::from(v.iter().map(|x| x / n).collect::<Vec<_>>()))
}

/// Accuracy of assigning each test point the label of the most
/// cosine-similar class centroid. Ties go to the smaller label id.
pub fn nearest_centroid_accuracy(train: &[(Vec64, usize)], test: &[(Vec64, usize)]) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::MissingSplit("train"));
    }
    if test.is_empty() {
        return Err(Error::MissingSplit("test"));
    }
    let dim = train[0].0.len();
    let mut sums: BTreeMap<usize, Vec64> = BTreeMap::new();
    for (v, label) in train {
        sums.entry(*label)
            .or_insert_with(|| Vec64::zeros(dim))
            .add_scaled(1.0, &unit(v)?);
    }
    let mut correct = 0usize;
    for (v, label) in test {
        let mut best: Option<(f64, usize)> = None;
        for (&l, centroid) in &sums {
            let s = cosine(v, centroid)?;
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, l));
            }
        }
        if best.map(|(_, l)| l) == Some(*label) {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means from `restarts` seeded initializations (k distinct data
/// points each), keeping the lowest-inertia assignment.
pub fn kmeans(points: &[Vec64], k: usize, seed: u64, restarts: usize, max_iter: usize) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centroids: Vec<Vec64> = sample(&mut rng, n, k).into_iter().map(|i| points[i].clone()).collect();
        let mut assign = vec![usize::MAX; n];
        for _ in 0..max_iter {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let mut bc = 0;
                let mut bd = f64::INFINITY;
                for (c, centroid) in centroids.iter().enumerate() {
                    let d = sq_dist(p, centroid);
                    if d < bd {
                        bd = d;
                        bc = c;
                    }
                }
                if assign[i] != bc {
                    assign[i] = bc;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = vec![Vec64::zeros(points[0].len()); k];
            let mut counts = vec![0usize; k];
            for (p, &a) in points.iter().zip(&assign) {
                sums[a].add_scaled(1.0, p);
                counts[a] += 1;
            }
            for c in 0..k {
                if counts[c] > 0 {
                    let inv = 1.0 / counts[c] as f64;
                    centroids[c] = Vec64::from(sums[c].iter().map(|x| x * inv).collect::<Vec<_>>());
                }
            }
        }
        let inertia: f64 = points.iter().zip(&assign).map(|(p, &a)| sq_dist(p, &centroids[a])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    best.map(|(_, a)| a).unwrap_or_default()
}

fn entropy(counts: impl Iterator<Item = usize>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// V-measure: harmonic mean of homogeneity and completeness.
pub fn v_measure(gold: &[usize], pred: &[usize]) -> f64 {
    assert_eq!(gold.len(), pred.len());
    let n = gold.len() as f64;
    if gold.is_empty() {
        return 0.0;
    }
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut gc: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pc: BTreeMap<usize, usize> = BTreeMap::new();
    for (&g, &p) in gold.iter().zip(pred) {
        *joint.entry((g, p)).or_default() += 1;
        *gc.entry(g).or_default() += 1;
        *pc.entry(p).or_default() += 1;
    }
    let h_c = entropy(gc.values().copied(), n);
    let h_k = entropy(pc.values().copied(), n);
    // H(C|K) = −Σ n_ck/n · ln(n_ck/n_k)
    let mut h_c_given_k = 0.0;
    let mut h_k_given_c = 0.0;
    for (&(g, p), &c) in &joint {
        let c = c as f64;
        h_c_given_k -= c / n * (c / pc[&p] as f64).ln();
        h_k_given_c -= c / n * (c / gc[&g] as f64).ln();
    }
    let homogeneity = if h_c == 0.0 { 1.0 } else { 1.0 - h_c_given_k / h_c };
    let completeness = if h_k == 0.0 { 1.0 } else { 1.0 - h_k_given_c / h_k };
    if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    }
}

/// Best accuracy over thresholds `t` of the rule `score ≥ t ⇒ positive`,
/// sweeping every observed score plus +∞.
pub fn best_threshold_accuracy(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SingleClass);
    }
    let n = scores.len() as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // Start at t = +∞ (everything negative) and lower t one distinct value
    // at a time.
    let mut correct = labels.iter().filter(|&&l| !l).count();
    let mut best = correct;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                correct += 1;
            } else {
                correct -= 1;
            }
            i += 1;
        }
        best = best.max(correct);
    }
    Ok(best as f64 / n)
}

/// Binary-relevance nDCG@k of a ranked list.
pub fn ndcg_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    let gain = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, d)| relevant.contains(d))
        .map(|(r, _)| gain(r))
        .sum();
    let ideal: f64 = (0..relevant.len().min(k)).map(gain).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

pub fn average_precision(ranked: &[usize], relevant: &HashSet<usize>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, d) in ranked.iter().enumerate() {
        if relevant.contains(d) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

// ---------------------------------------------------------------------------
// Embedding-level evaluation.

/// Embeds texts once each, truncated to `eval_dim`.
struct Cache<'a, E: Embedder + ?Sized> {
    embedder: &'a E,
    dim: usize,
    memo: HashMap<String, Vec64>,
}

impl<'a, E: Embedder + ?Sized> Cache<'a, E> {
    fn new(embedder: &'a E, dim: usize) -> Result<Self> {
        if dim == 0 || dim > embedder.dim() {
            return Err(Error::DimOutOfRange {
                dim,
                len: embedder.dim(),
            });
        }
        Ok(Self {
            embedder,
            dim,
            memo: HashMap::new(),
        })
    }

    fn get(&mut self, text: &str) -> Result<Vec64> {
        if let Some(v) = self.memo.get(text) {
            return Ok(v.clone());
        }
        let v = prefix(&self.embedder.embed(text)?, self.dim)?;
        self.memo.insert(text.to_string(), v.clone());
        Ok(v)
    }
}

fn label_ids<'a>(labels: impl Iterator<Item = &'a String>) -> HashMap<&'a str, usize> {
    let mut ids = HashMap::new();
    for l in labels {
        let next = ids.len();
        ids.entry(l.as_str()).or_insert(next);
    }
    ids
}

pub fn eval_classification<E: Embedder + ?Sized>(encoder: &E, dataset: &EvalDataset, eval_dim: usize) -> Result<f64> {
    let EvalRecords::Classification { train, test } = &dataset.records else {
        return Err(Error::TaskBatchMismatch {
            task: dataset.task().to_string(),
            batch: "classification",
        });
    };
    let mut cache = Cache::new(encoder, eval_dim)?;
    let ids = label_ids(train.iter().chain(test).map(|(_, l)| l));
    let embed = |rows: &[(String, String)], cache: &mut Cache<E>| -> Result<Vec<(Vec64, usize)>> {
        rows.iter().map(|(t, l)| Ok((cache.get(t)?, ids[l.as_str()]))).collect()
    };
    let train = embed(train, &mut cache)?;
    let test = embed(test, &mut cache)?;
    nearest_centroid_accuracy(&train, &test)
}

pub fn eval_clustering<E: Embedder + ?Sized>(encoder: &E, dataset: &EvalDataset, eval_dim: usize) -> Result<f64> {
    let EvalRecords::Clustering { items } = &dataset.records else {
        return Err(Error::TaskBatchMismatch {
            task: dataset.task().to_string(),
            batch: "clustering",
        });
    };
    let ids = label_ids(items.iter().map(|(_, l)| l));
    if ids.len() < 2 {
        return Err(Error::DegenerateClusters(ids.len()));
    }
    let mut cache = Cache::new(encoder, eval_dim)?;
    let points: Vec<Vec64> = items
        .iter()
        .map(|(t, _)| unit(&cache.get(t)?))
        .collect::<Result<_>>()?;
    let gold: Vec<usize> = items.iter().map(|(_, l)| ids[l.as_str()]).collect();
    let pred = kmeans(&points, ids.len(), KMEANS_SEED, KMEANS_RESTARTS, KMEANS_MAX_ITER);
    Ok(v_measure(&gold, &pred))
}

pub fn eval_pair<E: Embedder + ?Sized>(encoder: &E, dataset: &EvalDataset, eval_dim: usize) -> Result<f64> {
    let EvalRecords::PairClassification { pairs } = &dataset.records else {
        return Err(Error::TaskBatchMismatch {
            task: dataset.task().to_string(),
            batch: "pair_classification",
        });
    };
    let mut cache = Cache::new(encoder, eval_dim)?;
    let scores: Vec<f64> = pairs
        .iter()
        .map(|(a, b, _)| cosine(&cache.get(a)?, &cache.get(b)?))
        .collect::<Result<_>>()?;
    let labels: Vec<bool> = pairs.iter().map(|p| p.2).collect();
    best_threshold_accuracy(&scores, &labels)
}

/// nDCG@k for retrieval datasets, MAP for reranking datasets.
/// 1 if any of the top `k` is relevant.
pub fn recall_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    if ranked.iter().take(k).any(|i| relevant.contains(i)) {
        1.0
    } else {
        0.0
    }
}

fn mean_over_corpus<E: Embedder + ?Sized>(
    cache: &mut Cache<'_, E>,
    corpus: &[(String, String)],
    queries: &[(String, Vec<String>)],
    metric: impl Fn(&[usize], &HashSet<usize>) -> f64,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyInput);
    }
    let docs: Vec<Vec64> = corpus.iter().map(|(_, t)| cache.get(t)).collect::<Result<_>>()?;
    let index: HashMap<&str, usize> = corpus.iter().enumerate().map(|(i, (id, _))| (id.as_str(), i)).collect();
    let mut total = 0.0;
    for (qi, (query, relevant)) in queries.iter().enumerate() {
        let relevant: HashSet<usize> = relevant
            .iter()
            .filter_map(|id| index.get(id.as_str()).copied())
            .collect();
        if relevant.is_empty() {
            return Err(Error::NoRelevantDocs(qi));
        }
        let ranked = rank_corpus(&cache.get(query)?, &docs)?;
        total += metric(&ranked, &relevant);
    }
    Ok(total / queries.len() as f64)
}

/// Mean recall@k over the queries of a retrieval dataset.
pub fn eval_recall<E: Embedder + ?Sized>(encoder: &E, dataset: &EvalDataset, eval_dim: usize, k: usize) -> Result<f64> {
    let mut cache = Cache::new(encoder, eval_dim)?;
    match &dataset.records {
        EvalRecords::Retrieval { corpus, queries } => {
            mean_over_corpus(&mut cache, corpus, queries, |ranked, relevant| recall_at_k(ranked, relevant, k))
        }
        _ => Err(Error::TaskBatchMismatch {
            task: dataset.task().to_string(),
            batch: "recall",
        }),
    }
}

pub fn eval_retrieval<E: Embedder + ?Sized>(
    encoder: &E,
    dataset: &EvalDataset,
    eval_dim: usize,
    k: usize,
) -> Result<f64> {
    let mut cache = Cache::new(encoder, eval_dim)?;
    match &dataset.records {
        EvalRecords::Retrieval { corpus, queries } => {
            mean_over_corpus(&mut cache, corpus, queries, |ranked, relevant| ndcg_at_k(ranked, relevant, k))
        }
        EvalRecords::Reranking { queries } => {
            if queries.is_empty() {
                return Err(Error::EmptyInput);
            }
            let mut total = 0.0;
            for (qi, q) in queries.iter().enumerate() {
                if q.positive.is_empty() {
                    return Err(Error::NoRelevantDocs(qi));
                }
                let candidates: Vec<Vec64> = q
                    .positive
                    .iter()
                    .chain(&q.negative)
                    .map(|t| cache.get(t))
                    .collect::<Result<_>>()?;
                let relevant: HashSet<usize> = (0..q.positive.len()).collect();
                let ranked = rank_corpus(&cache.get(&q.query)?, &candidates)?;
                total += average_precision(&ranked, &relevant);
            }
            Ok(total / queries.len() as f64)
        }
        _ => Err(Error::TaskBatchMismatch {
            task: dataset.task().to_string(),
            batch: "retrieval",
        }),
    }
}

pub fn eval_sts<E: Embedder + ?Sized>(encoder: &E, dataset: &EvalDataset, eval_dim: usize) -> Result<f64> {
    let EvalRecords::Sts { pairs } = &dataset.records else {
        return Err(Error::TaskBatchMismatch {
            task: dataset.task().to_string(),
            batch: "sts",
        });
    };
    let mut cache = Cache::new(encoder, eval_dim)?;
    let cos: Vec<f64> = pairs
        .iter()
        .map(|(a, b, _)| cosine(&cache.get(a)?, &cache.get(b)?))
        .collect::<Result<_>>()?;
    let gold: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    spearman(&cos, &gold)
}

/// Runs the metric matching the dataset's task.
pub fn eval_dataset<E: Embedder + ?Sized>(encoder: &E, dataset: &EvalDataset, eval_dim: usize) -> Result<f64> {
    match dataset.task() {
        Task::Classification => eval_classification(encoder, dataset, eval_dim),
        Task::Clustering => eval_clustering(encoder, dataset, eval_dim),
        Task::PairClassification => eval_pair(encoder, dataset, eval_dim),
        Task::Reranking | Task::Retrieval => eval_retrieval(encoder, dataset, eval_dim, RETRIEVAL_K),
        Task::Sts => eval_sts(encoder, dataset, eval_dim),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub name: String,
    pub task: Task,
    pub score: f64,
}

/// Per-task averages and their overall mean, all on the metric's native
/// scale (multiply by 100 for points).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eval_dim: usize,
    pub datasets: Vec<DatasetScore>,
    pub per_task: BTreeMap<Task, f64>,
    pub average: f64,
}

impl EvalReport {
    pub fn from_scores(eval_dim: usize, datasets: Vec<DatasetScore>) -> Result<Self> {
        let mut grouped: BTreeMap<Task, Vec<f64>> = BTreeMap::new();
        for d in &datasets {
            grouped.entry(d.task).or_default().push(d.score);
        }
        if grouped.is_empty() {
            return Err(Error::EmptyInput);
        }
        let per_task: BTreeMap<Task, f64> = grouped
            .into_iter()
            .map(|(t, s)| (t, s.iter().sum::<f64>() / s.len() as f64))
            .collect();
        let average = per_task.values().sum::<f64>() / per_task.len() as f64;
        Ok(Self {
            eval_dim,
            datasets,
            per_task,
            average,
        })
    }

    pub fn get(&self, task: Task) -> Option<f64> {
        self.per_task.get(&task).copied()
    }

    /// Six-task average in points.
    pub fn average_points(&self) -> f64 {
        100.0 * self.average
    }

    pub fn table_header() -> String {
        let mut s = format!("{:>6}", "Dim");
        for t in Task::ALL {
            let _ = write!(s, " {:>9}", t.column());
        }
        s + &format!(" {:>9}", "Avg.")
    }

    /// One aligned row, in points.
    pub fn table_row(&self) -> String {
        let mut s = format!("{:>6}", self.eval_dim);
        for t in Task::ALL {
            match self.get(t) {
                Some(v) => {
                    let _ = write!(s, " {:>9.2}", 100.0 * v);
                }
                None => {
                    let _ = write!(s, " {:>9}", "-");
                }
            }
        }
        s + &format!(" {:>9.2}", self.average_points())
    }

    /// Header plus one row per report.
    pub fn table(reports: &[EvalReport]) -> String {
        let mut s = Self::table_header() + "\n";
        for r in reports {
            s.push_str(&r.table_row());
            s.push('\n');
        }
        s
    }
}

/// Evaluates every dataset, averages within each task, then across tasks.
pub fn eval_all<E: Embedder + ?Sized>(encoder: &E, suites: &[EvalDataset], eval_dim: usize) -> Result<EvalReport> {
    let scores = suites
        .iter()
        .map(|d| {
            Ok(DatasetScore {
                name: d.name.clone(),
                task: d.task(),
                score: eval_dataset(encoder, d, eval_dim)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_scores(eval_dim, scores)
}
