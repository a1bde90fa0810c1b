use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use metaphor_core::corpus::write_sentences;
use metaphor_core::synthetic::marker_dataset;
use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_metaphor");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn metaphor(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = metaphor(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn read_lines(p: &Path) -> Vec<Value> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn mock_transfer(out: &Path) {
    ok(&["--config", s(&fixture("transfer-mock.toml")), "transfer", "--out", s(out)]);
}

#[test]
fn mock_transfer_fills_the_budget() {
    let tmp = TempDir::new().unwrap();
    mock_transfer(tmp.path());
    let transfers = read_lines(&tmp.path().join("transfers.jsonl"));
    assert_eq!(transfers.len(), 5);
    let manifest = read_json(&tmp.path().join("run-manifest.json"));
    let hash = manifest["manifest_hash"].as_str().unwrap();
    for t in &transfers {
        assert_eq!(t["accepted"], true);
        assert_eq!(t["replacement_token"], "blazed");
        assert_eq!(t["manifest_hash"], hash);
    }
    let summary = read_json(&tmp.path().join("transfer-summary.json"));
    assert_eq!(summary["accepted"], 5);
    assert_eq!(summary["shortfall"], 0);
    assert_eq!(manifest["subcommand"], "transfer");
    assert!(manifest["outputs"]["transfers.jsonl"].is_string());
}

#[test]
fn reruns_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    mock_transfer(a.path());
    mock_transfer(b.path());
    for name in ["transfers.jsonl", "attempts.jsonl", "transfer-summary.json"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs between runs"
        );
    }
    let ma = read_json(&a.path().join("run-manifest.json"));
    let mb = read_json(&b.path().join("run-manifest.json"));
    assert_eq!(ma["manifest_hash"], mb["manifest_hash"]);
    assert_eq!(ma["outputs"], mb["outputs"]);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    ok(&["--config", s(&fixture("transfer-mock.toml")), "transfer", "--budget", "3", "--out", s(tmp.path())]);
    assert_eq!(read_lines(&tmp.path().join("transfers.jsonl")).len(), 3);
    let manifest = read_json(&tmp.path().join("run-manifest.json"));
    assert_eq!(manifest["config"]["transfer"]["budget_n"], 3);
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(metaphor(&["transfer", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(metaphor(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(metaphor(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let out = metaphor(&["--config", "/nonexistent/run.toml", "transfer", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_budget_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = metaphor(&["--config", s(&fixture("transfer-mock.toml")), "transfer", "--budget", "0", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_dataset_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "this is,not\na MOH-X,file,at all\n").unwrap();
    let out = metaphor(&["--strict", "ingest", "--dataset", "moh-x", "--input", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let garbled = tmp.path().join("garbled.jsonl");
    fs::write(&garbled, "{not json\n").unwrap();
    let out = metaphor(&["ingest", "--dataset", "custom", "--input", s(&garbled), "--out", s(&tmp.path().join("p"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_model_dir_is_a_resource_error() {
    let tmp = TempDir::new().unwrap();
    let out = metaphor(&[
        "--config",
        s(&fixture("transfer-mock.toml")),
        "transfer",
        "--classifier",
        s(&tmp.path().join("no-model")),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

/// ingest → train-clf → eval-clf → transfer → ratios → locate → eval-pack → eval-summarize
#[test]
fn end_to_end_pipeline() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let raw = root.join("marker.jsonl");
    write_sentences(&raw, &marker_dataset(240, "blazed", 3)).unwrap();

    let ing = root.join("ingest");
    ok(&[
        "ingest",
        "--dataset",
        "custom",
        "--input",
        s(&raw),
        "--plaintext",
        s(&fixture("poetry.txt")),
        "--out",
        s(&ing),
    ]);
    let dataset = ing.join("dataset.json");
    let corpus = ing.join("corpus.jsonl");
    assert_eq!(read_lines(&corpus).len(), 20);

    let clf = root.join("clf");
    ok(&["train-clf", "--dataset", s(&dataset), "--out", s(&clf)]);
    let model = clf.join("model");
    assert!(model.join("manifest.json").is_file());

    let ev = root.join("eval");
    ok(&["eval-clf", "--model", s(&model), "--dataset", s(&dataset), "--out", s(&ev)]);
    let metrics = read_json(&ev.join("metrics.json"));
    for key in ["precision", "recall", "f1", "accuracy"] {
        let v = metrics[key].as_f64().unwrap_or_else(|| panic!("{key} missing"));
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(metrics["accuracy"].as_f64().unwrap() > 0.9, "{metrics}");

    let tr = root.join("transfer");
    ok(&[
        "transfer",
        "--classifier",
        s(&model),
        "--reconstructor",
        "mock:constant:blazed",
        "--corpus",
        s(&corpus),
        "--budget",
        "6",
        "--pos",
        "VERB",
        "--out",
        s(&tr),
    ]);
    let transfers = tr.join("transfers.jsonl");
    assert_eq!(read_lines(&transfers).len(), 6);

    let ra = root.join("ratios");
    ok(&["ratios", "--attempts", s(&tr.join("attempts.jsonl")), "--out", s(&ra)]);
    assert!(read_json(&ra.join("ratios.json")).is_object());

    let loc = root.join("locate");
    ok(&[
        "locate",
        "--classifier",
        "mock:uniform:2,2",
        "--layer",
        "2",
        "--head",
        "1",
        "--dataset",
        s(&dataset),
        "--out",
        s(&loc),
    ]);
    assert!(loc.join("location.json").is_file());
    let sw = root.join("sweep");
    ok(&["sweep-attention", "--classifier", "mock:uniform:2,2", "--dataset", s(&dataset), "--out", s(&sw)]);
    assert!(sw.join("sweep.json").is_file());

    let pk = root.join("packet");
    ok(&[
        "eval-pack",
        "--transfers",
        s(&transfers),
        "--dataset",
        s(&dataset),
        "--per-origin",
        "4",
        "--packet-id",
        "p1",
        "--out",
        s(&pk),
    ]);
    let public_raw = fs::read_to_string(pk.join("p1.packet.json")).unwrap();
    assert!(!public_raw.contains("origin"), "public packet leaks origin");
    let public: Value = serde_json::from_str(&public_raw).unwrap();
    let hash = public["manifest_hash"].as_str().unwrap().to_string();
    let items: Vec<String> = public["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["item_id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(items.len(), 8);

    let scores = root.join("scores.jsonl");
    let mut lines = String::new();
    for (a, annotator) in ["ann-a", "ann-b"].iter().enumerate() {
        for (i, item) in items.iter().enumerate() {
            let v = 1 + ((i + a) % 5) as u8;
            let rec = json!({
                "annotator_id": annotator, "item_id": item, "packet_id": "p1", "manifest_hash": hash,
                "fluency": v, "meaning": v, "creativity": v, "metaphoricity": v,
            });
            lines.push_str(&format!("{rec}\n"));
        }
    }
    fs::write(&scores, &lines).unwrap();
    let sm = root.join("summary");
    ok(&[
        "eval-summarize",
        "--packet-dir",
        s(&pk),
        "--packet-id",
        "p1",
        "--scores",
        s(&scores),
        "--out",
        s(&sm),
    ]);
    assert!(read_json(&sm.join("summary.json")).is_object());

    let foreign = root.join("foreign.jsonl");
    fs::write(&foreign, lines.replace(&hash, &"0".repeat(64))).unwrap();
    let out = metaphor(&[
        "eval-summarize",
        "--packet-dir",
        s(&pk),
        "--packet-id",
        "p1",
        "--scores",
        s(&foreign),
        "--out",
        s(&root.join("refused")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lineage"));
}

#[test]
fn reconstructor_and_augmentation_commands() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let raw = root.join("marker.jsonl");
    write_sentences(&raw, &marker_dataset(160, "blazed", 9)).unwrap();
    let ing = root.join("ingest");
    ok(&["ingest", "--dataset", "custom", "--input", s(&raw), "--plaintext", s(&fixture("poetry.txt")), "--out", s(&ing)]);
    let dataset = ing.join("dataset.json");

    let clf = root.join("clf");
    ok(&["train-clf", "--dataset", s(&dataset), "--out", s(&clf)]);
    let mmm = root.join("mmm");
    ok(&["train-mmm", "--classifier", s(&clf.join("model")), "--dataset", s(&dataset), "--epochs", "2", "--out", s(&mmm)]);
    assert!(mmm.join("model").is_dir());
    let ev = root.join("eval-mmm");
    ok(&["eval-mmm", "--model", s(&mmm.join("model")), "--dataset", s(&dataset), "--out", s(&ev)]);
    let rec = read_json(&ev.join("reconstruction.json"));
    assert!(rec["evaluated"].as_u64().unwrap() > 0);
    assert!((0.0..=1.0).contains(&rec["accuracy_overall"].as_f64().unwrap()));

    let tr = root.join("transfer");
    ok(&["--config", s(&fixture("transfer-mock.toml")), "transfer", "--budget", "8", "--out", s(&tr)]);
    let aug = root.join("augment");
    ok(&[
        "augment",
        "--dataset",
        s(&dataset),
        "--transfers",
        s(&tr.join("transfers.jsonl")),
        "--corpus",
        s(&ing.join("corpus.jsonl")),
        "--k",
        "4",
        "--out",
        s(&aug),
    ]);
    let report = read_json(&aug.join("augment.json"));
    assert_eq!(report["added_metaphorical"], 4);
    assert_eq!(report["added_literal"], 4);
    let train = read_json(&dataset)["splits"]["train"].as_array().unwrap().len();
    let augmented = read_lines(&aug.join("augmented.jsonl"));
    assert_eq!(augmented.len(), train + 8);
    let transferred: Vec<Value> = read_lines(&tr.join("transfers.jsonl"))
        .iter()
        .map(|t| t["transferred_text"].clone())
        .collect();
    let added = augmented.iter().filter(|r| transferred.contains(&r["text"])).count();
    assert_eq!(added, 4);
}
