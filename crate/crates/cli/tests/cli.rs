use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use expanet_core::synthetic::toy_corpus;

fn expanet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expanet"))
        .args(args)
        .env_remove("EXPANET_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let corpus = toy_corpus(3);
        fs::write(dir.path().join("docs.jsonl"), corpus.docs_jsonl()).unwrap();
        fs::write(dir.path().join("train.jsonl"), corpus.texts_jsonl(0..24)).unwrap();
        fs::write(dir.path().join("test.jsonl"), corpus.texts_jsonl(24..32)).unwrap();
        fs::write(dir.path().join("labels.json"), corpus.labels_json()).unwrap();
        let cfg = r#"{"train": "train.jsonl", "test": "test.jsonl", "labels": "labels.json",
            "docs": "docs.jsonl", "dim": 16, "memory_size": 4, "epochs": 5, "hops": 2}"#;
        fs::write(dir.path().join("run.json"), cfg).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }
}

fn train_into(fx: &Fixture, out: &Path) {
    let out_s = out.to_str().unwrap();
    stdout(&expanet(&["train", "--config", &fx.arg("run.json"), "--out", out_s]));
}

#[test]
fn build_index_is_byte_deterministic() {
    let fx = Fixture::new();
    let a = fx.arg("a.idx");
    let b = fx.arg("b.idx");
    let text = stdout(&expanet(&["build-index", "--docs", &fx.arg("docs.jsonl"), "--out", &a]));
    assert!(text.contains("documents\t12"), "{text}");
    stdout(&expanet(&["build-index", "--docs", &fx.arg("docs.jsonl"), "--out", &b]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn retrieve_ranks_matching_documents_and_rejects_empty_queries() {
    let fx = Fixture::new();
    let idx = fx.arg("docs.idx");
    stdout(&expanet(&["build-index", "--docs", &fx.arg("docs.jsonl"), "--out", &idx]));

    // Querying with a document's own text puts that document first.
    let corpus = toy_corpus(3);
    let (id, text) = &corpus.docs[5];
    let text = text.replace(" common", "");
    let out = stdout(&expanet(&["retrieve", "--index", &idx, "--query", &text, "--k", "3"]));
    let rows: Vec<Vec<&str>> = out.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "1");
    assert_eq!(rows[0][1], id);
    let scores: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let none = expanet(&["retrieve", "--index", &idx, "--query", "zzzunseen"]);
    assert!(none.status.success());
    assert!(none.stdout.is_empty());

    let empty = expanet(&["retrieve", "--index", &idx, "--query", " ,. "]);
    assert_eq!(empty.status.code(), Some(2));
}

#[test]
fn train_is_deterministic_and_writes_artifacts() {
    let fx = Fixture::new();
    let a = fx.path("run_a");
    let b = fx.path("run_b");
    train_into(&fx, &a);
    train_into(&fx, &b);
    for f in ["checkpoint.bin", "history.csv", "metrics.json", "attention.json", "index.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    let c = fx.path("run_c");
    let out = Command::new(env!("CARGO_BIN_EXE_expanet"))
        .args(["train", "--config", &fx.arg("run.json"), "--out", c.to_str().unwrap()])
        .env("EXPANET_SEED", "9")
        .output()
        .unwrap();
    stdout(&out);
    assert_ne!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(c.join("checkpoint.bin")).unwrap());
}

#[test]
fn evaluate_and_expand_use_the_trained_checkpoint() {
    let fx = Fixture::new();
    let run = fx.path("run");
    train_into(&fx, &run);
    let ckpt = run.join("checkpoint.bin");
    let idx = run.join("index.bin");
    let (ckpt, idx) = (ckpt.to_str().unwrap(), idx.to_str().unwrap());

    let eval = stdout(&expanet(&["evaluate", "--checkpoint", ckpt, "--index", idx, "--test", &fx.arg("test.jsonl")]));
    let micro: f64 = eval.lines().next().unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&micro));

    let query = &toy_corpus(3).texts[0].1;
    let out = stdout(&expanet(&["expand", "--checkpoint", ckpt, "--index", idx, "--query", query]));
    let mut sections: Vec<Vec<f64>> = Vec::new();
    for line in out.lines() {
        if line.starts_with("# hop") {
            sections.push(Vec::new());
        } else if line.starts_with('#') {
            if line.starts_with("# prediction") {
                sections.push(Vec::new());
            }
        } else if let Some(cur) = sections.last_mut() {
            cur.push(line.rsplit('\t').next().unwrap().parse().unwrap());
        }
    }
    // Two hops of attention plus the class distribution.
    assert_eq!(sections.len(), 3, "{out}");
    for s in &sections {
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{out}");
    }

    // An index with a different vocabulary is refused.
    let other = fx.arg("other.idx");
    stdout(&expanet(&["build-index", "--docs", &fx.arg("test.jsonl"), "--out", &other]));
    let bad = expanet(&["evaluate", "--checkpoint", ckpt, "--index", &other, "--test", &fx.arg("test.jsonl")]);
    assert!(!bad.status.success());
}

#[test]
fn baseline_and_sweep_produce_reports() {
    let fx = Fixture::new();
    let out = stdout(&expanet(&["baseline", "--method", "rocchio", "--config", &fx.arg("run.json")]));
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["method"], "rocchio");
    assert!(v["micro_f1"].as_f64().unwrap() <= 1.0);

    let sweep_dir = fx.arg("sweep");
    let csv = stdout(&expanet(&[
        "sweep", "--kind", "memory", "--config", &fx.arg("run.json"),
        "--sizes", "2,4", "--seeds", "2", "--out", &sweep_dir,
    ]));
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(fx.path("sweep").join("sweep_memory.json").is_file());
}

#[test]
fn missing_inputs_fail_cleanly() {
    let fx = Fixture::new();
    let out = expanet(&["build-index", "--docs", &fx.arg("nope.jsonl"), "--out", &fx.arg("x.idx")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));

    fs::write(fx.path("broken.json"), r#"{"train": "missing.jsonl", "labels": "labels.json", "docs": "docs.jsonl"}"#).unwrap();
    let out = expanet(&["train", "--config", &fx.arg("broken.json"), "--out", &fx.arg("o")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
}
