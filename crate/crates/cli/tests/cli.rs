use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dsr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn dsr")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dsr(dir, args);
    assert!(
        out.status.success(),
        "dsr {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures/synth")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn init_model_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["init-model", "--preset", "tiny", "--seed", "7", "-o", "a.dsrm"]);
    ok(d, &["init-model", "--preset", "tiny", "--seed", "7", "-o", "b.dsrm"]);
    ok(d, &["init-model", "--preset", "tiny", "--seed", "8", "-o", "c.dsrm"]);
    let a = std::fs::read(d.join("a.dsrm")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.dsrm")).unwrap());
    assert_ne!(a, std::fs::read(d.join("c.dsrm")).unwrap());
}

#[test]
fn prune_then_stats_reports_target_sparsity() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["init-model", "--preset", "tiny", "--seed", "7", "-o", "m.dsrm"]);
    ok(d, &["prune", "--model", "m.dsrm", "--sparsity", "0.9", "--pattern", "unstructured", "-o", "p.dsrm"]);
    let out = ok(d, &["report", "--stats", "--model", "p.dsrm", "-o", "stats.json"]);
    assert!(out.contains("global sparsity 0.90"), "{out}");
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("stats.json")).unwrap()).unwrap();
    let g = stats["global_sparsity"].as_f64().unwrap();
    let total = stats["total"].as_f64().unwrap();
    assert!((g - 0.9).abs() <= 12.0 / total, "{g}");

    ok(d, &["prune", "--model", "m.dsrm", "--sparsity", "0.8", "--pattern", "block", "--compress", "-o", "b.dsrm"]);
    let out = ok(d, &["report", "--stats", "--model", "b.dsrm"]);
    assert!(out.contains("global sparsity 0.80"), "{out}");
    assert!(std::fs::metadata(d.join("b.dsrm")).unwrap().len() < std::fs::metadata(d.join("m.dsrm")).unwrap().len());
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (corpus, queries, qrels, train) = (fixture("corpus.jsonl"), fixture("queries.tsv"), fixture("qrels.trec"), fixture("train.jsonl"));
    ok(d, &["init-model", "--preset", "tiny", "--seed", "1", "-o", "m.dsrm"]);
    ok(d, &["prune", "--model", "m.dsrm", "--sparsity", "0.9", "--compress", "-o", "p.dsrm"]);
    ok(d, &["train", "--model", "p.dsrm", "--train", &train, "--epochs", "1", "-o", "t.dsrm"]);
    let stats = ok(d, &["report", "--stats", "--model", "t.dsrm"]);
    assert!(stats.contains("global sparsity 0.90"), "{stats}");
    ok(d, &["index", "--model", "t.dsrm", "--corpus", &corpus, "-o", "idx.bin"]);
    ok(d, &["search", "--index", "idx.bin", "--model", "t.dsrm", "--queries", &queries, "--k", "200", "-o", "run.trec"]);
    let run = std::fs::read_to_string(d.join("run.trec")).unwrap();
    assert_eq!(run.lines().count(), 100 * 200);
    let eval = ok(d, &["eval", "--run", "run.trec", "--qrels", &qrels, "-o", "metrics.json"]);
    let acc: Vec<f64> = ["accuracy@20", "accuracy@100", "accuracy@200"]
        .iter()
        .map(|k| {
            let line = eval.lines().find(|l| l.starts_with(&format!("{k}\t"))).unwrap_or_else(|| panic!("{k} in {eval}"));
            line.split('\t').nth(1).unwrap().parse().unwrap()
        })
        .collect();
    assert!(acc[0] <= acc[1] && acc[1] <= acc[2], "{acc:?}");
    ok(d, &["bench", "--model", "t.dsrm", "--queries", &queries, "--num-queries", "50", "--runs", "2", "--warmup-queries", "5", "-o", "bench.csv"]);
    ok(d, &["bench", "--model", "m.dsrm", "--queries", &queries, "--num-queries", "50", "--runs", "2", "--warmup-queries", "5", "--format", "json", "-o", "dense.json"]);
    std::fs::write(
        d.join("report.json"),
        r#"{"datasets": ["synth"], "models": [
            {"name": "dense", "accuracy": {"synth": 10.0}, "qps": "dense.json"},
            {"name": "sparse90", "accuracy": {"synth": "metrics.json"}, "qps": "bench.csv"}]}"#,
    )
    .unwrap();
    let summary = ok(d, &["report", "--summary", "report.json", "--figure", "figure.csv"]);
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "Model,synth,QPS,Speedup");
    assert!(lines[1].starts_with("dense,10.00%,") && lines[1].ends_with(",1.00"), "{summary}");
    assert!(lines[2].starts_with("sparse90,"), "{summary}");
    let fig = std::fs::read_to_string(d.join("figure.csv")).unwrap();
    assert!(fig.starts_with("series,label,qps,relative_accuracy\nsynth,dense,"), "{fig}");
}

#[test]
fn untied_training_and_search() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (corpus, queries, train) = (fixture("corpus.jsonl"), fixture("queries.tsv"), fixture("train.jsonl"));
    ok(d, &["init-model", "--seed", "2", "-o", "m.dsrm"]);
    let out = dsr(d, &["train", "--model", "m.dsrm", "--train", &train, "--tied", "untied", "--epochs", "1", "-o", "q.dsrm"]);
    assert!(!out.status.success());
    ok(d, &["train", "--model", "m.dsrm", "--train", &train, "--tied", "untied", "--epochs", "1", "--learning-rate", "0.5", "-o", "q.dsrm", "--doc-output", "d.dsrm"]);
    ok(d, &["index", "--model", "d.dsrm", "--corpus", &corpus, "-o", "idx.bin"]);
    let out = dsr(d, &["search", "--index", "idx.bin", "--model", "q.dsrm", "--queries", &queries, "--k", "5", "-o", "r1.trec"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"), "mismatched encoder should warn");
    let out = dsr(d, &["search", "--index", "idx.bin", "--model", "q.dsrm", "--doc-model", "d.dsrm", "--queries", &queries, "--k", "5", "-o", "r2.trec"]);
    assert!(out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).contains("warning"));
    ok(d, &["encode", "--model", "q.dsrm", "--queries", &queries, "-o", "q.jsonl"]);
    let first: serde_json::Value = serde_json::from_str(std::fs::read_to_string(d.join("q.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["id"], "Q000");
    assert_eq!(first["vector"].as_array().unwrap().len(), 32);
}

#[test]
fn usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = dsr(d, &["frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = dsr(d, &["init-model", "--no-such-flag", "-o", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    ok(d, &["init-model", "-o", "m.dsrm"]);
    std::fs::write(d.join("c.jsonl"), "{\"docid\":\"a\",\"text\":\"x\"}\n{\"docid\":\"b\"\n").unwrap();
    let out = dsr(d, &["index", "--model", "m.dsrm", "--corpus", "c.jsonl", "-o", "i.bin"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("c.jsonl:2"), "{err}");

    let mut bytes = std::fs::read(d.join("m.dsrm")).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 1;
    std::fs::write(d.join("bad.dsrm"), bytes).unwrap();
    let out = dsr(d, &["report", "--stats", "--model", "bad.dsrm"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn synth_and_experiment_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--num-docs", "80", "--num-train", "16", "--num-eval", "12", "-o", "data"]);
    std::fs::write(
        d.join("exp.json"),
        r#"{"datasets": [{"name": "toy", "corpus": "data/corpus.jsonl", "queries": "data/queries.tsv",
                          "qrels": "data/qrels.trec", "train": "data/train.jsonl"}],
            "train": {"epochs": 1},
            "bench": {"num_queries": 20, "runs": 2, "warmup_queries": 2},
            "variants": [{"name": "dense", "tied": "tied"},
                         {"name": "sparse90", "tied": "untied", "sparsity": 0.9}],
            "output_dir": "out"}"#,
    )
    .unwrap();
    let out = ok(d, &["--config", "exp.json", "experiment"]);
    assert!(out.starts_with("Model,toy,QPS,Speedup\ndense,"), "{out}");
    for f in ["summary.csv", "figure.csv", "quality-toy.csv", "result.json"] {
        assert!(d.join("out").join(f).exists(), "{f}");
    }
    let quality = std::fs::read_to_string(d.join("out/quality-toy.csv")).unwrap();
    assert!(quality.starts_with("Model,Tied,Sparsity,Block-Sparsity,Accuracy@20,Impact,Accuracy@100,Impact,Accuracy@200,Impact,MRR@10,Impact\n"));
    let out = dsr(d, &["experiment"]);
    assert!(!out.status.success());
}
