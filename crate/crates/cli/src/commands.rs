use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::info;
use mtembed::ablation::{run_ablation, AblationRun, LossVariant};
use mtembed::checkpoint::{load_checkpoint, save_checkpoint, write_atomic};
use mtembed::data::{load_jsonl, reformat_labeled, TaskDataset, TrainExample};
use mtembed::encoder::Embedder;
use mtembed::eval::{eval_all, load_eval_jsonl, EvalDataset, EvalReport};
use mtembed::mining::mine_all;
use mtembed::numerics::Vec64;
use mtembed::synth::{run_phase1, run_phase2, HttpTransport, MockTransport, Transport};
use mtembed::toy::{ToyBundle, ToyConfig, ToyWorld};
use mtembed::trainer::{log_to_csv, smoothed, train as run_training, TrainConfig};
use mtembed::{gradcheck as grad, Error, Task};
use serde_json::{json, Value};

use crate::config::{require, RunConfig};
use crate::exit::{CliError, CONFIG, DATA, DIM, RUNTIME};
use crate::manifest::RunManifest;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::new(DATA, format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(write_atomic(path, text.as_bytes())?)
}

/// Manifest next to a single-file output.
fn sidecar(out: &Path) -> PathBuf {
    PathBuf::from(format!("{}.manifest.json", out.display()))
}

fn ensure_parent(out: &Path) -> Result<(), CliError> {
    match out.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(p) => create_dir(p),
        None => Ok(()),
    }
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    cfg.encoder.validate()?;
    cfg.train.validate(&cfg.encoder)?;
    if cfg.inputs.train_data.is_empty() {
        return Err(CliError::new(DATA, "no training data given"));
    }
    let datasets: Vec<TaskDataset> = cfg.inputs.train_data.iter().map(load_jsonl).collect::<Result<_, _>>()?;

    create_dir(out)?;
    let ckpt_path = out.join("checkpoint.pic2");
    let csv_path = out.join("loss.csv");
    let manifest_path = out.join("manifest.json");
    RunManifest::new(
        "train",
        cfg.train.seed,
        cfg,
        cfg.inputs.train_data.clone(),
        vec![ckpt_path.clone(), csv_path.clone(), manifest_path.clone()],
    )
    .write(&manifest_path)?;

    info!("training {} steps on {} sets, seed {}", cfg.train.steps, datasets.len(), cfg.train.seed);
    let result = run_training(&datasets, &cfg.encoder, &cfg.train)?;
    save_checkpoint(&result.checkpoint, &ckpt_path)?;
    write_text(&csv_path, &log_to_csv(&result.log))?;

    let losses: Vec<f64> = result.log.iter().map(|r| r.loss).collect();
    let sm = smoothed(&losses, 20);
    println!(
        "seed={} steps={} loss_first={:.4} loss_last={:.4} checkpoint={}",
        cfg.train.seed,
        result.log.len(),
        sm.first().copied().unwrap_or(f64::NAN),
        sm.last().copied().unwrap_or(f64::NAN),
        ckpt_path.display()
    );
    Ok(())
}

/// Files as given; directories expand to their `*.jsonl` in name order.
fn expand_suites(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = vec![];
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::new(DATA, format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::new(DATA, "no evaluation suites given"));
    }
    Ok(out)
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    if cfg.inputs.dims.is_empty() {
        return Err(CliError::new(CONFIG, "--dims must list at least one dimension"));
    }
    let ckpt_path = require(&cfg.inputs.checkpoint, "checkpoint")?;
    let ckpt = load_checkpoint(ckpt_path)?;
    let out_dim = ckpt.encoder.out_dim;
    if let Some(&d) = cfg.inputs.dims.iter().find(|&&d| d == 0 || d > out_dim) {
        return Err(CliError::new(DIM, format!("dim {d} is outside 1..={out_dim} of this checkpoint")));
    }
    let files = expand_suites(&cfg.inputs.eval_suites)?;
    let suites: Vec<EvalDataset> = files.iter().map(load_eval_jsonl).collect::<Result<_, _>>()?;

    create_dir(out)?;
    let json_path = out.join("report.json");
    let table_path = out.join("report.txt");
    let manifest_path = out.join("manifest.json");
    let mut inputs = vec![ckpt_path.to_path_buf()];
    inputs.extend(files);
    RunManifest::new("eval", 0, cfg, inputs, vec![json_path.clone(), table_path.clone(), manifest_path.clone()])
        .write(&manifest_path)?;

    let encoder = ckpt.encoder()?;
    let reports: Vec<EvalReport> = cfg
        .inputs
        .dims
        .iter()
        .map(|&d| eval_all(&encoder, &suites, d))
        .collect::<Result<_, _>>()?;
    let table = EvalReport::table(&reports);
    write_text(&json_path, &(serde_json::to_string_pretty(&reports).expect("report serializes") + "\n"))?;
    write_text(&table_path, &table)?;
    print!("{table}");
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<(usize, Value)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::new(DATA, format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|v| (i + 1, v))
                .map_err(|e| CliError::from(Error::ParseError {
                    line: i + 1,
                    message: e.to_string(),
                }))
        })
        .collect()
}

fn text_field(v: &Value, line: usize, field: &str) -> Result<String, CliError> {
    match v.get(field).and_then(Value::as_str) {
        Some(s) if !s.trim().is_empty() => Ok(s.to_string()),
        _ => Err(Error::SchemaError {
            line,
            field: field.into(),
            message: "expected a non-empty string".into(),
        }
        .into()),
    }
}

fn embed_all(encoder: &impl Embedder, texts: &[String]) -> Result<Vec<Vec64>, CliError> {
    Ok(texts.iter().map(|t| encoder.embed(t)).collect::<Result<_, _>>()?)
}

pub fn mine(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    cfg.mining.validate()?;
    let ckpt_path = require(&cfg.inputs.checkpoint, "checkpoint")?;
    let corpus_path = require(&cfg.inputs.corpus, "corpus")?;
    let queries_path = require(&cfg.inputs.queries, "queries")?;
    let encoder = load_checkpoint(ckpt_path)?.encoder()?;
    let corpus: Vec<String> = read_lines(corpus_path)?
        .iter()
        .map(|(line, v)| text_field(v, *line, "text"))
        .collect::<Result<_, _>>()?;
    let queries = load_jsonl(queries_path)?;
    if queries.task != Task::Retrieval {
        return Err(CliError::new(DATA, format!("queries must be retrieval records, got {}", queries.task)));
    }

    ensure_parent(out)?;
    let manifest_path = sidecar(out);
    RunManifest::new(
        "mine",
        cfg.mining.seed,
        cfg,
        vec![ckpt_path.into(), corpus_path.into(), queries_path.into()],
        vec![out.into(), manifest_path.clone()],
    )
    .write(&manifest_path)?;

    let index: HashMap<&str, Vec<usize>> = corpus.iter().enumerate().fold(HashMap::new(), |mut m, (i, t)| {
        m.entry(t.as_str()).or_default().push(i);
        m
    });
    let mut query_texts = vec![];
    let mut gold = vec![];
    for ex in &queries.examples {
        let TrainExample::Retrieval { query, pos, .. } = ex else {
            unreachable!("retrieval dataset")
        };
        query_texts.push(query.clone());
        gold.push(
            pos.iter()
                .flat_map(|p| index.get(p.as_str()).into_iter().flatten().copied())
                .collect::<HashSet<usize>>(),
        );
    }
    let corpus_vecs = embed_all(&encoder, &corpus)?;
    let query_vecs = embed_all(&encoder, &query_texts)?;
    let mined = mine_all(&query_vecs, &corpus_vecs, &gold, &cfg.mining)?;

    let examples = queries
        .examples
        .iter()
        .zip(&mined)
        .map(|(ex, picks)| match ex {
            TrainExample::Retrieval { query, pos, .. } => TrainExample::Retrieval {
                query: query.clone(),
                pos: pos.clone(),
                neg: picks.iter().map(|&i| corpus[i].clone()).collect(),
            },
            _ => unreachable!("retrieval dataset"),
        })
        .collect();
    let filled = TaskDataset::new(Task::Retrieval, examples)?;
    write_text(out, &filled.to_jsonl())?;
    println!(
        "queries={} negatives_per_query={} window={}..={} seed={} out={}",
        filled.len(),
        cfg.mining.samples_per_query,
        cfg.mining.rank_lo,
        cfg.mining.rank_hi,
        cfg.mining.seed,
        out.display()
    );
    Ok(())
}

/// A JSON list, a `{"tasks": [...]}` object, or one task per line.
fn read_tasks(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::new(DATA, format!("{}: {e}", path.display())))?;
    let from_json = match serde_json::from_str::<Value>(&text) {
        Ok(Value::Array(items)) => Some(items),
        Ok(Value::Object(mut m)) => match m.remove("tasks") {
            Some(Value::Array(items)) => Some(items),
            _ => None,
        },
        _ => None,
    };
    let tasks: Vec<String> = match from_json {
        Some(items) => items.iter().filter_map(Value::as_str).map(str::to_string).collect(),
        None => text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect(),
    };
    if tasks.is_empty() {
        return Err(CliError::new(DATA, format!("{}: no tasks", path.display())));
    }
    Ok(tasks)
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    cfg.synth.validate()?;
    let phase = cfg.inputs.synth_phase;
    if !(1..=2).contains(&phase) {
        return Err(CliError::new(CONFIG, format!("synth phase must be 1 or 2, got {phase}")));
    }
    let tasks = if phase == 2 {
        Some(read_tasks(require(&cfg.inputs.tasks, "task list")?)?)
    } else {
        None
    };
    let transport: Box<dyn Transport> = match &cfg.inputs.mock {
        Some(path) => Box::new(MockTransport::load(path)?),
        None => Box::new(HttpTransport::from_env(
            &cfg.synth.endpoint,
            Duration::from_secs(cfg.synth.timeout_secs),
        )?),
    };

    ensure_parent(out)?;
    let manifest_path = sidecar(out);
    let inputs = cfg.inputs.tasks.iter().chain(&cfg.inputs.mock).cloned().collect();
    RunManifest::new("synth", cfg.synth.seed, cfg, inputs, vec![out.into(), manifest_path.clone()])
        .write(&manifest_path)?;

    match tasks {
        None => {
            let tasks = run_phase1(&cfg.synth, transport.as_ref())?;
            write_text(out, &(serde_json::to_string_pretty(&json!({ "tasks": tasks })).expect("json") + "\n"))?;
            println!("phase=1 tasks={} out={}", tasks.len(), out.display());
        }
        Some(tasks) => {
            let examples = run_phase2(&tasks, &cfg.synth, transport.as_ref())?;
            let ds = TaskDataset::new(Task::Retrieval, examples)?;
            write_text(out, &ds.to_jsonl())?;
            println!("phase=2 topics={} triplets={} out={}", tasks.len(), ds.len(), out.display());
        }
    }
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> Result<(), CliError> {
    let checks = grad::run(cfg.inputs.gradcheck_seed, grad::DEFAULT_BATCHES)?;
    for c in &checks {
        println!("loss={} max_rel_err={:.3e}", c.loss, c.max_rel_err);
    }
    match checks.iter().find(|c| !c.passed()) {
        Some(c) => Err(CliError::new(
            RUNTIME,
            format!("{} gradient error {:.3e} exceeds {:e}", c.loss, c.max_rel_err, grad::TOLERANCE),
        )),
        None => Ok(()),
    }
}

pub fn reformat(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let task = cfg.inputs.reformat_task;
    if !matches!(task, Task::Classification | Task::Clustering) {
        return Err(CliError::new(CONFIG, format!("reformat targets classification or clustering, not {task}")));
    }
    let texts_path = require(&cfg.inputs.texts, "texts")?;
    let rows: Vec<(String, String)> = read_lines(texts_path)?
        .iter()
        .map(|(line, v)| Ok((text_field(v, *line, "text")?, text_field(v, *line, "label")?)))
        .collect::<Result<_, CliError>>()?;
    let labels: Vec<String> = if cfg.inputs.labels.is_empty() {
        rows.iter().map(|(_, l)| l.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        cfg.inputs.labels.clone()
    };
    let ds = TaskDataset::new(task, reformat_labeled(&rows, &labels)?)?;

    ensure_parent(out)?;
    let manifest_path = sidecar(out);
    RunManifest::new("reformat", 0, cfg, vec![texts_path.into()], vec![out.into(), manifest_path.clone()])
        .write(&manifest_path)?;
    write_text(out, &ds.to_jsonl())?;
    println!("examples={} labels={} out={}", ds.len(), labels.len(), out.display());
    Ok(())
}

pub fn gen_toy(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let world = ToyWorld::new(ToyConfig {
        seed: cfg.inputs.toy_seed,
        ..ToyConfig::default()
    });
    let bundle = ToyBundle::generate(&world)?;
    create_dir(out)?;
    let manifest_path = out.join("manifest.json");
    let outputs = bundle.files().into_iter().map(|(rel, _)| out.join(rel)).collect();
    RunManifest::new("gen-toy", cfg.inputs.toy_seed, cfg, vec![], outputs).write(&manifest_path)?;
    bundle.write(out)?;
    println!("seed={} files={} out={}", cfg.inputs.toy_seed, bundle.files().len(), out.display());
    Ok(())
}

pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    if cfg.inputs.ablation_seeds.is_empty() {
        return Err(CliError::new(CONFIG, "no ablation seeds"));
    }
    let base = cfg.ablation();
    base.train.validate(&cfg.encoder)?;
    let bundle = match &cfg.inputs.bundle {
        Some(dir) => ToyBundle::load(dir)?,
        None => ToyBundle::generate(&ToyWorld::new(ToyConfig {
            seed: cfg.inputs.toy_seed,
            ..ToyConfig::default()
        }))?,
    };

    create_dir(out)?;
    let json_path = out.join("ablation.json");
    let table_path = out.join("ablation.txt");
    let manifest_path = out.join("manifest.json");
    RunManifest::new(
        "ablate",
        cfg.inputs.ablation_seeds[0],
        cfg,
        cfg.inputs.bundle.iter().cloned().collect(),
        vec![json_path.clone(), table_path.clone(), manifest_path.clone()],
    )
    .write(&manifest_path)?;

    let mut runs: Vec<(u64, AblationRun)> = vec![];
    let mut table = String::new();
    for &seed in &cfg.inputs.ablation_seeds {
        let mut c = base.clone();
        c.train = TrainConfig { seed, ..c.train };
        info!("ablation seed {seed}");
        let run = run_ablation(&bundle.train, &cfg.encoder, &c, &bundle.eval)?;
        table += &format!("seed {seed}\n{}\n", run.table());
        runs.push((seed, run));
    }
    let n = runs.len() as f64;
    let means: Vec<(LossVariant, f64)> = LossVariant::ALL
        .iter()
        .map(|&v| (v, runs.iter().map(|(_, r)| r.average(v).unwrap_or(f64::NAN)).sum::<f64>() / n))
        .collect();
    for (v, m) in &means {
        table += &format!("mean {:<16} {m:.2}\n", v.as_str());
    }
    let doc = json!({
        "seeds": runs.iter().map(|(seed, r)| json!({
            "seed": seed,
            "base": r.base,
            "variants": r.variants.iter().map(|(v, rep)| json!({"variant": v, "report": rep})).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "means": means.iter().map(|(v, m)| json!({"variant": v, "average": m})).collect::<Vec<_>>(),
    });
    write_text(&json_path, &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))?;
    write_text(&table_path, &table)?;
    print!("{table}");
    Ok(())
}
