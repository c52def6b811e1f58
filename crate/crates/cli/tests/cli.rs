use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &[&str] = &["--t", "1", "--m", "20", "--epochs-retriever", "1", "--d", "16", "--d-r", "16"];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_absa-rank")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn corpus() -> TempDir {
    let dir = TempDir::new().unwrap();
    ok(&["gen-data", "--out", p(&dir.path().join("data")), "--train", "120", "--test", "30"]);
    dir
}

fn with<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(tail).copied().collect()
}

#[test]
fn missing_subcommand_prints_usage_and_exits_1() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_exits_1() {
    assert_eq!(run(&["evaluate", "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn invalid_config_value_exits_1() {
    let dir = corpus();
    let data = dir.path().join("data");
    let out = run(&["evaluate", "--data", p(&data), "--ratio", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_data_writes_requested_sizes() {
    let dir = corpus();
    let lines = |f: &str| fs::read_to_string(dir.path().join("data").join(f)).unwrap().lines().count();
    assert_eq!((lines("train.jsonl"), lines("test.jsonl")), (120, 30));
}

fn parse_metrics(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut rows = text.lines().map(|l| l.split('\t').map(String::from).collect::<Vec<_>>());
    let header = rows.next().unwrap();
    assert_eq!(header, ["mode", "task", "k", "precision", "recall", "f1", "accuracy", "parse_failures"]);
    rows.collect()
}

#[test]
fn evaluate_frozen_lm_writes_parseable_metrics() {
    let dir = corpus();
    let (data, out) = (dir.path().join("data"), dir.path().join("out"));
    ok(&with(&["evaluate", "--mode", "frozen_lm", "--data", p(&data), "--out", p(&out)], SMALL));
    let rows = parse_metrics(&out.join("metrics.tsv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "frozen_lm");
    for v in &rows[0][3..7] {
        let x: f64 = v.parse().unwrap();
        assert!((0.0..=1.0).contains(&x));
    }
    assert_eq!(fs::read_to_string(out.join("predictions.jsonl")).unwrap().lines().count(), 30);
}

#[test]
fn replay_reproduces_metrics() {
    let dir = corpus();
    let (data, a, b) = (dir.path().join("data"), dir.path().join("a"), dir.path().join("b"));
    ok(&with(&["evaluate", "--data", p(&data), "--out", p(&a), "--lr", "1e-2"], SMALL));
    ok(&["replay", p(&a.join("run.json")), "--out", p(&b)]);
    assert_eq!(fs::read(a.join("metrics.tsv")).unwrap(), fs::read(b.join("metrics.tsv")).unwrap());
}

fn recorded_config(run_json: &Path) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_json).unwrap()).unwrap();
    v["config"].clone()
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = corpus();
    let (data, out) = (dir.path().join("data"), dir.path().join("out"));
    let cfg = dir.path().join("run.kv");
    fs::write(&cfg, "k = 2\nm = 30\n").unwrap();
    ok(&[
        "evaluate", "--config", p(&cfg), "--k", "3", "--data", p(&data), "--out", p(&out), "--t", "1",
        "--epochs-retriever", "1", "--d", "8", "--d-r", "8",
    ]);
    let c = recorded_config(&out.join("run.json"));
    assert_eq!(c["k"], "3");
    assert_eq!(c["m"], "30");
    assert_eq!(c["ratio"], "0.1");
}

#[test]
fn alternate_with_reported_settings_writes_lineage() {
    let dir = corpus();
    let (data, out) = (dir.path().join("data"), dir.path().join("alt"));
    ok(&[
        "alternate", "--t", "3", "--k", "4", "--ratio", "0.1", "--batch-size", "2", "--lr", "5e-5", "--data", p(&data),
        "--out", p(&out), "--m", "20", "--d", "16", "--d-r", "16",
    ]);
    for s in 0..=3 {
        assert!(out.join(format!("retriever_{s}.ckpt")).exists());
        assert!(out.join(format!("scorer_{s}.ckpt")).exists());
    }
    let metrics = fs::read_to_string(out.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    let c = recorded_config(&out.join("run.json"));
    assert_eq!((c["t"].as_str(), c["lr"].as_str(), c["batch-size"].as_str()), (Some("3"), Some("0.00005"), Some("2")));
}

#[test]
fn stage_commands_chain_through_checkpoints() {
    let dir = corpus();
    let data = dir.path().join("data");
    let alt = dir.path().join("alt");
    ok(&with(&["alternate", "--data", p(&data), "--out", p(&alt)], SMALL));

    let tr = dir.path().join("tr");
    let report = ok(&[
        "train-retriever", "--data", p(&data), "--out", p(&tr), "--scorer", p(&alt.join("scorer_0.ckpt")), "--m", "20",
        "--d-r", "16", "--epochs", "2",
    ]);
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("step\tepoch\tloss\tseparation\tqueries\tbootstrap"));
    assert_eq!(lines.count(), 2);

    let ft = dir.path().join("ft");
    ok(&[
        "finetune-lm", "--data", p(&data), "--out", p(&ft), "--retriever", p(&tr.join("retriever.ckpt")), "--scorer",
        p(&alt.join("scorer_0.ckpt")), "--epochs-lm", "1",
    ]);
    assert!(ft.join("scorer.ckpt").exists());

    let scored = ok(&[
        "score", "--scorer", p(&ft.join("scorer.ckpt")), "--prompt", "the battery was long", "--target", "battery: positive",
        "--out", p(&dir.path().join("sc")),
    ]);
    let total: f64 = scored.lines().next_back().unwrap().split('\t').next_back().unwrap().parse().unwrap();
    assert!(total <= 0.0);

    let hits = ok(&[
        "retrieve", "--retriever", p(&tr.join("retriever.ckpt")), "--query-id", "0", "--data", p(&data), "--out",
        p(&dir.path().join("rt")), "--m", "3", "--k", "1",
    ]);
    assert_eq!(hits.lines().count(), 4);
    assert!(hits.lines().skip(1).all(|l| !l.starts_with("0\t")));
}

#[test]
fn sweep_emits_one_row_per_k() {
    let dir = corpus();
    let (data, alt, sw) = (dir.path().join("data"), dir.path().join("alt"), dir.path().join("sw"));
    ok(&with(&["alternate", "--data", p(&data), "--out", p(&alt)], SMALL));
    ok(&with(&["sweep", "--models", p(&alt), "--data", p(&data), "--out", p(&sw)], SMALL));
    let text = fs::read_to_string(sw.join("sweep.tsv")).unwrap();
    let ks: Vec<&str> = text.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ks, ["0", "1", "2", "3", "4", "5", "6", "7"]);
}
