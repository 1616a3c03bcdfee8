//! A seeded synthetic world for small-scale multi-task experiments.
//!
//! The world has topics, each with a set of concepts. A concept has a few
//! interchangeable surface words and an importance weight. Texts are bags of
//! concept realizations plus filler words, so two texts can mean the same
//! thing with no words in common. Graded similarity is the weighted Dice
//! overlap of concept sets, a query is relevant to every document expressing
//! all of its concepts, and some texts carry a tone marker that is
//! independent of topic.
//!
//! [`ToyWorld::train_sets`] yields one training set per task family and
//! [`ToyWorld::eval_suite`] a held-out six-task evaluation suite drawn from
//! the same world with fresh randomness.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::write_atomic;
use crate::data::{load_jsonl, reformat_labeled, TaskDataset, TrainExample};
use crate::error::{Error, Result};
use crate::eval::{load_eval_jsonl, EvalDataset, EvalRecords, RerankQuery};
use crate::task::Task;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub seed: u64,
    pub topics: usize,
    pub concepts_per_topic: usize,
    pub synonyms: usize,
    pub tones: usize,
    pub fillers: usize,
    /// Concepts per document.
    pub doc_concepts: usize,
    /// Concepts per query, all taken from its document.
    pub query_concepts: usize,
    /// Examples per training set.
    pub train_size: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            topics: 8,
            concepts_per_topic: 12,
            synonyms: 3,
            tones: 2,
            fillers: 24,
            doc_concepts: 4,
            query_concepts: 2,
            train_size: 3200,
        }
    }
}

#[derive(Debug, Clone)]
struct Concept {
    words: Vec<String>,
    weight: f64,
}

#[derive(Debug, Clone)]
struct Topic {
    name: String,
    concepts: Vec<Concept>,
}

#[derive(Debug, Clone)]
struct Tone {
    name: String,
    markers: Vec<String>,
}

/// A text before rendering: which concepts of which topic it expresses.
#[derive(Debug, Clone)]
struct Sketch {
    topic: usize,
    concepts: BTreeSet<usize>,
    tone: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ToyWorld {
    config: ToyConfig,
    topics: Vec<Topic>,
    tones: Vec<Tone>,
    fillers: Vec<String>,
}

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

fn fresh_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let len = rng.random_range(4..=7);
        let w: String = (0..len).map(|_| *LETTERS.choose(rng).expect("non-empty") as char).collect();
        if used.insert(w.clone()) {
            return w;
        }
    }
}

/// Weighted Dice overlap of two concept sets within one topic.
fn weighted_dice(a: &BTreeSet<usize>, b: &BTreeSet<usize>, weights: &[f64]) -> f64 {
    let w = |s: &BTreeSet<usize>| s.iter().map(|&c| weights[c]).sum::<f64>();
    let shared: f64 = a.intersection(b).map(|&c| weights[c]).sum();
    let total = w(a) + w(b);
    if total == 0.0 {
        0.0
    } else {
        2.0 * shared / total
    }
}

impl ToyWorld {
    pub fn new(config: ToyConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut used = HashSet::new();
        let topics = (0..config.topics)
            .map(|_| Topic {
                name: fresh_word(&mut rng, &mut used),
                concepts: (0..config.concepts_per_topic)
                    .map(|c| Concept {
                        words: (0..config.synonyms).map(|_| fresh_word(&mut rng, &mut used)).collect(),
                        // Half the concepts carry most of the meaning.
                        weight: if c % 2 == 0 { 1.0 } else { 0.25 },
                    })
                    .collect(),
            })
            .collect();
        let tones = (0..config.tones)
            .map(|_| Tone {
                name: fresh_word(&mut rng, &mut used),
                markers: (0..config.synonyms).map(|_| fresh_word(&mut rng, &mut used)).collect(),
            })
            .collect();
        let fillers = (0..config.fillers).map(|_| fresh_word(&mut rng, &mut used)).collect();
        Self {
            config,
            topics,
            tones,
            fillers,
        }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn topic_names(&self) -> Vec<String> {
        self.topics.iter().map(|t| t.name.clone()).collect()
    }

    pub fn tone_names(&self) -> Vec<String> {
        self.tones.iter().map(|t| t.name.clone()).collect()
    }

    fn weights(&self, topic: usize) -> Vec<f64> {
        self.topics[topic].concepts.iter().map(|c| c.weight).collect()
    }

    fn render(&self, s: &Sketch, rng: &mut ChaCha8Rng) -> String {
        let topic = &self.topics[s.topic];
        let mut words: Vec<&str> = s
            .concepts
            .iter()
            .map(|&c| topic.concepts[c].words.choose(rng).expect("synonyms").as_str())
            .collect();
        if let Some(t) = s.tone {
            words.push(self.tones[t].markers.choose(rng).expect("markers"));
        }
        let n_fill = rng.random_range(1..=2);
        words.extend(self.fillers.choose_multiple(rng, n_fill).map(String::as_str));
        words.shuffle(rng);
        words.join(" ")
    }

    fn sketch(&self, k: usize, rng: &mut ChaCha8Rng) -> Sketch {
        Sketch {
            topic: rng.random_range(0..self.topics.len()),
            concepts: rand::seq::index::sample(rng, self.config.concepts_per_topic, k)
                .into_iter()
                .collect(),
            tone: None,
        }
    }

    /// A sketch of `size` concepts sharing exactly `shared` with `base`.
    fn overlapping(&self, base: &Sketch, shared: usize, size: usize, rng: &mut ChaCha8Rng) -> Sketch {
        let own: Vec<usize> = base.concepts.iter().copied().collect();
        let rest: Vec<usize> = (0..self.config.concepts_per_topic)
            .filter(|c| !base.concepts.contains(c))
            .collect();
        let mut concepts: BTreeSet<usize> = own.choose_multiple(rng, shared.min(own.len())).copied().collect();
        let need = size.saturating_sub(concepts.len()).min(rest.len());
        concepts.extend(rest.choose_multiple(rng, need).copied());
        Sketch {
            topic: base.topic,
            concepts,
            tone: None,
        }
    }

    /// A document and a query naming some of its concepts.
    fn doc_and_query(&self, rng: &mut ChaCha8Rng) -> (Sketch, Sketch) {
        let doc = self.sketch(self.config.doc_concepts, rng);
        let query = self.overlapping(&doc, self.config.query_concepts, self.config.query_concepts, rng);
        (doc, query)
    }

    /// Graded pairs: each anchor gets partners sharing a random number of
    /// its concepts, scored by weighted overlap on a 0–5 scale.
    fn sts_pairs(&self, anchors: usize, rng: &mut ChaCha8Rng) -> Vec<(String, String, f64)> {
        let k = self.config.doc_concepts;
        let mut out = vec![];
        for _ in 0..anchors {
            let a = self.sketch(k, rng);
            let w = self.weights(a.topic);
            let text_a = self.render(&a, rng);
            for _ in 0..4 {
                let b = self.overlapping(&a, rng.random_range(0..=k), k, rng);
                let score = 5.0 * weighted_dice(&a.concepts, &b.concepts, &w);
                out.push((text_a.clone(), self.render(&b, rng), (score * 100.0).round() / 100.0));
            }
        }
        out
    }

    /// Paraphrase pairs (same concepts, label 1) against near misses sharing
    /// all but one or two concepts (label 0).
    fn pair_rows(&self, anchors: usize, rng: &mut ChaCha8Rng) -> Vec<(String, String, bool)> {
        let k = self.config.doc_concepts;
        let mut out = vec![];
        for _ in 0..anchors {
            let a = self.sketch(k, rng);
            let text_a = self.render(&a, rng);
            out.push((text_a.clone(), self.render(&a, rng), true));
            let miss = self.overlapping(&a, k - rng.random_range(1..=2.min(k)), k, rng);
            out.push((text_a, self.render(&miss, rng), false));
        }
        out
    }

    fn toned(&self, rng: &mut ChaCha8Rng) -> (String, String) {
        let mut s = self.sketch(self.config.doc_concepts - 1, rng);
        let tone = rng.random_range(0..self.tones.len());
        s.tone = Some(tone);
        (self.render(&s, rng), self.tones[tone].name.clone())
    }

    fn topical(&self, rng: &mut ChaCha8Rng) -> (String, String) {
        let s = self.sketch(self.config.doc_concepts - 1, rng);
        (self.render(&s, rng), self.topics[s.topic].name.clone())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(stream);
        rng
    }

    /// Retrieval triplets: a query, its document, and three same-topic
    /// documents matching all but one query concept.
    pub fn retrieval_set(&self, n: usize, stream: u64) -> Result<TaskDataset> {
        let mut rng = self.rng(stream);
        let q = self.config.query_concepts;
        let examples = (0..n)
            .map(|_| {
                let (doc, query) = self.doc_and_query(&mut rng);
                let neg = (0..3)
                    .map(|_| {
                        let mut near = self.overlapping(&query, q - 1, q - 1, &mut rng);
                        let fill = self.overlapping(&doc, 0, self.config.doc_concepts - near.concepts.len(), &mut rng);
                        near.concepts.extend(fill.concepts);
                        self.render(&near, &mut rng)
                    })
                    .collect();
                TrainExample::Retrieval {
                    query: self.render(&query, &mut rng),
                    pos: vec![self.render(&doc, &mut rng)],
                    neg,
                }
            })
            .collect();
        TaskDataset::new(Task::Retrieval, examples)
    }

    /// One training set per task family: retrieval triplets, graded STS
    /// pairs, paraphrase pairs, tone classification and topic clustering.
    pub fn train_sets(&self) -> Result<Vec<TaskDataset>> {
        let n = self.config.train_size;
        let retrieval = self.retrieval_set(n, 1)?;
        let mut rng = self.rng(2);
        let sts = self
            .sts_pairs(n / 4, &mut rng)
            .into_iter()
            .map(|(a, b, s)| TrainExample::Scored {
                text_a: a,
                text_b: b,
                score: s,
            })
            .collect();
        let pair = self
            .pair_rows(n / 2, &mut rng)
            .into_iter()
            .map(|(a, b, l)| TrainExample::Scored {
                text_a: a,
                text_b: b,
                score: if l { 1.0 } else { 0.0 },
            })
            .collect();
        let toned: Vec<(String, String)> = (0..n).map(|_| self.toned(&mut rng)).collect();
        let topical: Vec<(String, String)> = (0..n).map(|_| self.topical(&mut rng)).collect();

        Ok(vec![
            retrieval,
            TaskDataset::new(Task::Sts, sts)?,
            TaskDataset::new(Task::PairClassification, pair)?,
            TaskDataset::new(Task::Classification, reformat_labeled(&toned, &self.tone_names())?)?,
            TaskDataset::new(Task::Clustering, reformat_labeled(&topical, &self.topic_names())?)?,
        ])
    }

    /// Held-out evaluation suite, one dataset per task.
    pub fn eval_suite(&self) -> Vec<EvalDataset> {
        self.eval_suite_from(3)
    }

    /// An evaluation suite drawn from RNG stream `stream`; streams 1 and 2
    /// are taken by the training sets.
    pub fn eval_suite_from(&self, stream: u64) -> Vec<EvalDataset> {
        let mut rng = self.rng(stream);
        let named = |name: &str, records| EvalDataset {
            name: format!("toy_{name}"),
            records,
        };
        let k = self.config.doc_concepts;
        let q = self.config.query_concepts;

        let train = (0..400).map(|_| self.toned(&mut rng)).collect();
        let test = (0..800).map(|_| self.toned(&mut rng)).collect();
        let classification = named("classification", EvalRecords::Classification { train, test });

        let items = (0..400).map(|_| self.topical(&mut rng)).collect();
        let clustering = named("clustering", EvalRecords::Clustering { items });

        let pairs = self.pair_rows(400, &mut rng);
        let pair = named("pair_classification", EvalRecords::PairClassification { pairs });

        let queries = (0..150)
            .map(|_| {
                let base = self.sketch(q, &mut rng);
                let mut positive = vec![];
                let mut negative = vec![];
                for i in 0..10 {
                    let shared = if i < 2 { q } else { rng.random_range(0..q) };
                    let mut cand = self.overlapping(&base, shared, shared, &mut rng);
                    let fill = self.overlapping(&base, 0, k - shared, &mut rng);
                    cand.concepts.extend(fill.concepts);
                    let text = self.render(&cand, &mut rng);
                    if shared == q {
                        positive.push(text);
                    } else {
                        negative.push(text);
                    }
                }
                RerankQuery {
                    query: self.render(&base, &mut rng),
                    positive,
                    negative,
                }
            })
            .collect();
        let reranking = named("reranking", EvalRecords::Reranking { queries });

        let docs: Vec<Sketch> = (0..400).map(|_| self.sketch(k, &mut rng)).collect();
        let corpus: Vec<(String, String)> = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("d{i:03}"), self.render(d, &mut rng)))
            .collect();
        let rqueries = (0..100)
            .map(|i| {
                let query = self.overlapping(&docs[4 * i], q, q, &mut rng);
                let relevant = docs
                    .iter()
                    .zip(&corpus)
                    .filter(|(d, _)| d.topic == query.topic && query.concepts.is_subset(&d.concepts))
                    .map(|(_, (id, _))| id.clone())
                    .collect();
                (self.render(&query, &mut rng), relevant)
            })
            .collect();
        let retrieval = named(
            "retrieval",
            EvalRecords::Retrieval {
                corpus,
                queries: rqueries,
            },
        );

        let pairs = self.sts_pairs(200, &mut rng);
        let sts = named("sts", EvalRecords::Sts { pairs });

        vec![classification, clustering, pair, reranking, retrieval, sts]
    }
}

/// Paraphrase clusters: each cluster is one fixed meaning rendered many
/// ways. The first `train_per_cluster` renderings train, the rest are
/// held-out queries whose relevant documents are their cluster's training
/// renderings.
#[derive(Debug, Clone, PartialEq)]
pub struct ParaphraseClusters {
    pub clusters: Vec<Vec<String>>,
    pub train_per_cluster: usize,
}

impl ToyWorld {
    /// One cluster per topic (up to `clusters`), `per_cluster` distinct
    /// renderings each.
    pub fn paraphrase_clusters(&self, clusters: usize, per_cluster: usize, held_out: usize, stream: u64) -> Result<ParaphraseClusters> {
        if clusters < 2 || clusters > self.topics.len() || held_out == 0 || held_out + 2 > per_cluster {
            return Err(Error::InvalidConfig(format!(
                "need 2..={} clusters and per_cluster >= held_out + 2 >= 3",
                self.topics.len()
            )));
        }
        let mut rng = self.rng(stream);
        let mut out = Vec::with_capacity(clusters);
        for topic in 0..clusters {
            let sketch = Sketch {
                topic,
                concepts: rand::seq::index::sample(&mut rng, self.config.concepts_per_topic, self.config.doc_concepts)
                    .into_iter()
                    .collect(),
                tone: None,
            };
            let mut seen = HashSet::new();
            let mut texts = Vec::with_capacity(per_cluster);
            // Renderings are drawn until distinct; the cap only guards
            // against tiny vocabularies.
            for _ in 0..per_cluster * 100 {
                if texts.len() == per_cluster {
                    break;
                }
                let t = self.render(&sketch, &mut rng);
                if seen.insert(t.clone()) {
                    texts.push(t);
                }
            }
            if texts.len() < per_cluster {
                return Err(Error::InvalidConfig("too few distinct paraphrases".into()));
            }
            out.push(texts);
        }
        Ok(ParaphraseClusters {
            clusters: out,
            train_per_cluster: per_cluster - held_out,
        })
    }
}

impl ParaphraseClusters {
    /// Each training rendering as a query whose positives are the other
    /// training renderings of its cluster.
    pub fn train_set(&self) -> Result<TaskDataset> {
        let mut examples = vec![];
        for texts in &self.clusters {
            let train = &texts[..self.train_per_cluster];
            for (i, q) in train.iter().enumerate() {
                examples.push(TrainExample::Retrieval {
                    query: q.clone(),
                    pos: train.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, t)| t.clone()).collect(),
                    neg: vec![],
                });
            }
        }
        TaskDataset::new(Task::Retrieval, examples)
    }

    /// Held-out renderings against the corpus of training renderings.
    pub fn eval_set(&self) -> EvalDataset {
        let mut corpus = vec![];
        let mut queries = vec![];
        for (c, texts) in self.clusters.iter().enumerate() {
            let ids: Vec<String> = (0..self.train_per_cluster).map(|i| format!("c{c}_{i:02}")).collect();
            corpus.extend(ids.iter().cloned().zip(texts[..self.train_per_cluster].iter().cloned()));
            queries.extend(texts[self.train_per_cluster..].iter().map(|q| (q.clone(), ids.clone())));
        }
        EvalDataset {
            name: "toy_paraphrase".into(),
            records: EvalRecords::Retrieval { corpus, queries },
        }
    }
}

pub const PARAPHRASE_CLUSTERS: usize = 8;
pub const PARAPHRASES_PER_CLUSTER: usize = 20;
pub const PARAPHRASES_HELD_OUT: usize = 5;
const PARAPHRASE_STREAM: u64 = 10;

/// Everything the default world ships as JSONL.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBundle {
    pub train: Vec<TaskDataset>,
    pub eval: Vec<EvalDataset>,
    pub paraphrase_train: TaskDataset,
    pub paraphrase_eval: EvalDataset,
}

const TRAIN_DIR: &str = "train";
/// Order of [`ToyWorld::train_sets`]; batch planning depends on it.
const TRAIN_ORDER: [Task; 5] = [
    Task::Retrieval,
    Task::Sts,
    Task::PairClassification,
    Task::Classification,
    Task::Clustering,
];
const EVAL_DIR: &str = "eval";
const PARAPHRASE_DIR: &str = "paraphrase";

impl ToyBundle {
    pub fn generate(world: &ToyWorld) -> Result<Self> {
        let para = world.paraphrase_clusters(
            PARAPHRASE_CLUSTERS,
            PARAPHRASES_PER_CLUSTER,
            PARAPHRASES_HELD_OUT,
            PARAPHRASE_STREAM,
        )?;
        Ok(Self {
            train: world.train_sets()?,
            eval: world.eval_suite(),
            paraphrase_train: para.train_set()?,
            paraphrase_eval: para.eval_set(),
        })
    }

    /// `(relative path, contents)` for every file, in a fixed order.
    pub fn files(&self) -> Vec<(PathBuf, String)> {
        let mut out: Vec<(PathBuf, String)> = self
            .train
            .iter()
            .map(|d| (Path::new(TRAIN_DIR).join(format!("{}.jsonl", d.task)), d.to_jsonl()))
            .collect();
        out.extend(
            self.eval
                .iter()
                .map(|d| (Path::new(EVAL_DIR).join(format!("{}.jsonl", d.name)), d.to_jsonl())),
        );
        out.push((Path::new(PARAPHRASE_DIR).join("train.jsonl"), self.paraphrase_train.to_jsonl()));
        out.push((
            Path::new(PARAPHRASE_DIR).join(format!("{}.jsonl", self.paraphrase_eval.name)),
            self.paraphrase_eval.to_jsonl(),
        ));
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (rel, content) in self.files() {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_atomic(&path, content.as_bytes())?;
        }
        Ok(())
    }

    /// Reads a bundle written by [`ToyBundle::write`]. Training sets load in
    /// generation order, evaluation sets in name order.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let jsonl = |sub: &str| -> Result<Vec<PathBuf>> {
            let d = dir.join(sub);
            let mut paths: Vec<PathBuf> = fs::read_dir(&d)
                .map_err(|e| Error::io(&d, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            paths.sort();
            Ok(paths)
        };
        let train = TRAIN_ORDER
            .iter()
            .map(|t| load_jsonl(dir.join(TRAIN_DIR).join(format!("{t}.jsonl"))))
            .collect::<Result<_>>()?;
        let eval = jsonl(EVAL_DIR)?.iter().map(load_eval_jsonl).collect::<Result<_>>()?;
        let para = dir.join(PARAPHRASE_DIR);
        Ok(Self {
            train,
            eval,
            paraphrase_train: load_jsonl(para.join("train.jsonl"))?,
            paraphrase_eval: load_eval_jsonl(para.join("toy_paraphrase.jsonl"))?,
        })
    }
}
