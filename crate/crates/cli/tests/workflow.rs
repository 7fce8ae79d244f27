use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn docgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docgraph"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = docgraph(args);
    assert!(
        out.status.success(),
        "docgraph {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synthetic_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs synth through eval under `dir` and returns the output root.
fn run_workflow(dir: &Path, docs: &str, extra_train: &[&str]) -> PathBuf {
    let corpus = dir.join("corpus");
    let filtered = dir.join("filter").join("annotations.tsv");
    let candidates = dir.join("cand").join("candidates.tsv");
    let config = synthetic_config();
    ok(&["synth", "--out", s(&corpus), "--docs", docs, "--seed", "13"]);
    ok(&["index", "--corpus", s(&corpus), "--out", s(&dir.join("index"))]);
    ok(&[
        "candidates", "--corpus", s(&corpus), "--index", s(&dir.join("index/index.json")), "--out", s(&dir.join("cand")),
    ]);
    ok(&["filter", "--corpus", s(&corpus), "--candidates", s(&candidates), "--out", s(&dir.join("filter"))]);
    let mut train = vec![
        "train", "--corpus", s(&corpus), "--annotations", s(&filtered), "--candidates", s(&candidates), "--config", s(&config),
        "--out",
    ];
    let model_dir = dir.join("model");
    train.push(s(&model_dir));
    train.extend_from_slice(extra_train);
    ok(&train);
    ok(&[
        "predict", "--corpus", s(&corpus), "--annotations", s(&filtered), "--candidates", s(&candidates), "--model",
        s(&dir.join("model/model.ckpt")), "--out", s(&dir.join("predict")),
    ]);
    ok(&[
        "eval", "--corpus", s(&corpus), "--annotations", s(&filtered), "--predictions",
        s(&dir.join("predict/predictions.tsv")), "--out", s(&dir.join("eval")),
    ]);
    dir.to_path_buf()
}

fn f1(metrics: &Path, row: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(metrics).unwrap()).unwrap();
    v[row]["f1"].as_f64().unwrap()
}

fn input_hash(manifest: &Path) -> String {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(manifest).unwrap()).unwrap();
    v["input_hash"].as_str().unwrap().to_string()
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(&["synth", "--out", s(d.path()), "--docs", "30", "--ambiguity", "0.3", "--seed", "5"]);
    }
    for name in ["documents.tsv", "mentions.tsv", "kb.tsv", "annotations.tsv", "gold_links.tsv", "train.ids", "dev.ids", "test.ids"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn gold_predictions_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&["synth", "--out", s(&corpus), "--docs", "20"]);
    let test: Vec<String> = std::fs::read_to_string(corpus.join("test.ids")).unwrap().lines().map(str::to_string).collect();
    let gold: String = std::fs::read_to_string(corpus.join("annotations.tsv"))
        .unwrap()
        .lines()
        .filter(|l| test.iter().any(|d| l.starts_with(&format!("{d}\t"))))
        .map(|l| format!("{l}\t1.0\n"))
        .collect();
    assert!(!gold.is_empty());
    let predictions = dir.path().join("gold.tsv");
    std::fs::write(&predictions, gold).unwrap();
    let out = dir.path().join("eval");
    ok(&["eval", "--corpus", s(&corpus), "--predictions", s(&predictions), "--out", s(&out)]);
    assert_eq!(f1(&out.join("metrics.json"), "model"), 1.0);
    assert!(out.join("manifest.eval.json").exists());
}

#[test]
fn exit_codes_follow_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(docgraph(&["--help"]).status.code(), Some(0));
    assert_eq!(docgraph(&["--version"]).status.code(), Some(0));
    assert_eq!(docgraph(&[]).status.code(), Some(1));
    assert_eq!(docgraph(&["train", "--bogus"]).status.code(), Some(1));
    let missing = dir.path().join("nope");
    assert_eq!(docgraph(&["index", "--corpus", s(&missing), "--out", s(dir.path())]).status.code(), Some(2));

    let corpus = dir.path().join("corpus");
    ok(&["synth", "--out", s(&corpus), "--docs", "20"]);
    std::fs::write(corpus.join("kb.tsv"), "garbage\n").unwrap();
    let out = docgraph(&["index", "--corpus", s(&corpus), "--out", s(&dir.path().join("i"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "embed_dim = 30\nheads = 4\n").unwrap();
    let out = docgraph(&[
        "train", "--corpus", s(&corpus), "--candidates", "x", "--config", s(&config), "--out", s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn workflow_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let runs: Vec<PathBuf> = [&a, &b].iter().map(|d| run_workflow(d.path(), "40", &["--epochs", "30"])).collect();
    for file in [
        "index/index.json",
        "cand/candidates.tsv",
        "filter/annotations.tsv",
        "model/model.ckpt",
        "model/config.toml",
        "model/train_report.json",
        "predict/predictions.tsv",
        "eval/metrics.json",
        "eval/metrics.txt",
    ] {
        assert_eq!(std::fs::read(runs[0].join(file)).unwrap(), std::fs::read(runs[1].join(file)).unwrap(), "{file}");
    }
    for manifest in ["model/manifest.train.json", "predict/manifest.predict.json", "eval/manifest.eval.json"] {
        assert_eq!(input_hash(&runs[0].join(manifest)), input_hash(&runs[1].join(manifest)), "{manifest}");
    }
}

#[test]
fn synthetic_workflow_reaches_high_f1() {
    let dir = tempfile::tempdir().unwrap();
    let root = run_workflow(dir.path(), "200", &[]);
    let f = f1(&root.join("eval/metrics.json"), "model");
    assert!(f >= 0.95, "test F1 {f}");
}
