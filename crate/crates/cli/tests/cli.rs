use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mtembed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtembed"))
        .args(args)
        .env_remove("SYNTH_API_KEY")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn paraphrase_train() -> PathBuf {
    repo().join("data/toy/paraphrase/train.jsonl")
}

/// A one-step checkpoint in `dir`.
fn smoke_checkpoint(dir: &Path) -> PathBuf {
    let out = dir.join("run");
    let r = mtembed(&["train", s(&paraphrase_train()), "--out", s(&out), "--steps", "1"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    out.join("checkpoint.pic2")
}

#[test]
fn gradcheck_prints_one_line_per_loss() {
    let r = mtembed(&["gradcheck"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let lines: Vec<String> = stdout(&r).lines().map(String::from).collect();
    let names: Vec<&str> = lines
        .iter()
        .map(|l| l.split_whitespace().next().unwrap().trim_start_matches("loss="))
        .collect();
    assert_eq!(names, ["info_nce", "cosent", "label_nce", "mrl"]);
    for l in &lines {
        let err: f64 = l.split("max_rel_err=").nth(1).unwrap().parse().unwrap();
        assert!(err < 1e-4, "{l}");
    }
}

#[test]
fn one_step_train_writes_checkpoint_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = smoke_checkpoint(dir.path());
    let run = ckpt.parent().unwrap();
    assert!(ckpt.exists());
    let csv = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "header plus one row");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["train"]["steps"], 1);
}

#[test]
fn manifest_alone_reproduces_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let r = mtembed(&["train", s(&paraphrase_train()), "--out", s(&first), "--steps", "5", "--seed", "3"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let second = dir.path().join("b");
    let manifest = first.join("manifest.json");
    let r = mtembed(&["train", "--config", s(&manifest), "--out", s(&second)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    for f in ["loss.csv", "checkpoint.pic2"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_data_exits_3_without_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let r = mtembed(&["train", "/nonexistent/train.jsonl", "--out", s(&out)]);
    assert_eq!(code(&r), 3, "{}", stderr(&r));
    assert!(!out.join("checkpoint.pic2").exists());
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let r = mtembed(&["train", s(&paraphrase_train()), "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));
    let r = mtembed(&["train", s(&paraphrase_train()), "--lr", "-1", "--out", s(dir.path())]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));
}

#[test]
fn eval_one_report_per_dim_and_rejects_wide_dims() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = smoke_checkpoint(dir.path());
    let suites = repo().join("data/toy/eval");
    let out = dir.path().join("eval");
    let r = mtembed(&["eval", s(&suites), "--checkpoint", s(&ckpt), "--dims", "16,32,64,128", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let reports: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let dims: Vec<u64> = reports.as_array().unwrap().iter().map(|r| r["eval_dim"].as_u64().unwrap()).collect();
    assert_eq!(dims, [16, 32, 64, 128]);
    let table = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.trim_start().starts_with("Dim"));

    let single = dir.path().join("single");
    let r = mtembed(&["eval", s(&suites), "--checkpoint", s(&ckpt), "--dims", "128", "--out", s(&single)]);
    assert_eq!(code(&r), 0);
    let reports: Value = serde_json::from_str(&fs::read_to_string(single.join("report.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 1);

    let wide = dir.path().join("wide");
    let r = mtembed(&["eval", s(&suites), "--checkpoint", s(&ckpt), "--dims", "4096", "--out", s(&wide)]);
    assert_eq!(code(&r), 5, "{}", stderr(&r));
    assert!(!wide.join("report.json").exists());
}

#[test]
fn synth_mock_three_topics_gives_thirty_triplets() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("synth.jsonl");
    let r = mtembed(&[
        "synth",
        "--phase",
        "2",
        "--tasks",
        s(&repo().join("data/synth/topics.txt")),
        "--mock",
        s(&repo().join("data/synth/fixture.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let lines: Vec<Value> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 30);
    assert!(lines.iter().all(|l| l["task"] == "retrieval"));
    let manifest = fs::read_to_string(dir.path().join("synth.jsonl.manifest.json")).unwrap();
    assert!(!manifest.contains("SYNTH_API_KEY="));
}

#[test]
fn synth_without_credential_or_mock_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tasks.json");
    let r = mtembed(&["synth", "--phase", "1", "--out", s(&out)]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));
    assert!(stderr(&r).contains("SYNTH_API_KEY"));
    assert!(!out.exists());
}

fn write_corpus(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    let corpus = dir.join("corpus.jsonl");
    let queries = dir.join("queries.jsonl");
    let text = fs::read_to_string(repo().join("data/toy/eval/toy_retrieval.jsonl")).unwrap();
    let docs: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v.get("doc_id").is_some())
        .take(n)
        .collect();
    fs::write(&corpus, docs.iter().map(|d| d.to_string() + "\n").collect::<String>()).unwrap();
    let q: String = docs
        .iter()
        .take(5)
        .map(|d| serde_json::json!({"task": "retrieval", "query": d["text"], "pos": [d["text"]], "neg": []}).to_string() + "\n")
        .collect();
    fs::write(&queries, q).unwrap();
    (corpus, queries)
}

#[test]
fn mine_fills_negatives() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = smoke_checkpoint(dir.path());
    let (corpus, queries) = write_corpus(dir.path(), 200);
    let out = dir.path().join("mined.jsonl");
    let args = ["mine", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--queries", s(&queries), "--out", s(&out)];
    let r = mtembed(&args);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let first = fs::read_to_string(&out).unwrap();
    for l in first.lines() {
        let v: Value = serde_json::from_str(l).unwrap();
        let neg = v["neg"].as_array().unwrap();
        assert_eq!(neg.len(), 15);
        assert!(!neg.contains(&v["pos"][0]));
    }
    assert_eq!(code(&mtembed(&args)), 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), first);
}

#[test]
fn mine_on_forty_docs_reports_empty_window() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = smoke_checkpoint(dir.path());
    let (corpus, queries) = write_corpus(dir.path(), 40);
    let out = dir.path().join("mined.jsonl");
    let r = mtembed(&["mine", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--queries", s(&queries), "--out", s(&out)]);
    assert_eq!(code(&r), 3);
    assert!(stderr(&r).contains("mining window is empty"), "{}", stderr(&r));
    assert!(!out.exists());
}

#[test]
fn reformat_builds_label_triplets() {
    let dir = tempfile::tempdir().unwrap();
    let texts = dir.path().join("texts.jsonl");
    fs::write(
        &texts,
        "{\"text\": \"great film\", \"label\": \"pos\"}\n{\"text\": \"dull plot\", \"label\": \"neg\"}\n",
    )
    .unwrap();
    let out = dir.path().join("labeled.jsonl");
    let r = mtembed(&["reformat", "--texts", s(&texts), "--task", "clustering", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let first: Value = serde_json::from_str(fs::read_to_string(&out).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["task"], "clustering");
    assert_eq!(first["pos_label"], "pos");
    assert_eq!(first["neg_labels"], serde_json::json!(["neg"]));

    let r = mtembed(&["reformat", "--texts", s(&texts), "--labels", "pos,other", "--out", s(&out)]);
    assert_eq!(code(&r), 3, "{}", stderr(&r));
}

#[test]
fn gen_toy_matches_shipped_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let r = mtembed(&["gen-toy", "--out", s(dir.path())]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    for sub in ["train/retrieval.jsonl", "eval/toy_sts.jsonl", "paraphrase/train.jsonl"] {
        assert_eq!(
            fs::read(dir.path().join(sub)).unwrap(),
            fs::read(repo().join("data/toy").join(sub)).unwrap(),
            "{sub}"
        );
    }
}
