use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Stdio};

use metaphor_cli::serve::{router, scores_path, AppState};
use metaphor_core::evalkit::{build_packet, AnnotationItem, Origin};
use metaphor_core::synthetic::marker_dataset;
use reqwest::StatusCode;
use serde_json::{json, Value};
use tempfile::TempDir;

const HASH: &str = "feedc0de";

fn write_packet(dir: &Path, id: &str, per_origin: usize) -> Vec<String> {
    let metaphors: Vec<_> = marker_dataset(4 * per_origin, "blazed", 11)
        .into_iter()
        .filter(|s| s.is_metaphorical())
        .collect();
    let items = |range: std::ops::Range<usize>, origin: Origin| -> Vec<AnnotationItem> {
        range
            .map(|i| AnnotationItem::from_sentence(format!("{id}-{i:03}"), &metaphors[i], origin).unwrap())
            .collect()
    };
    let packet = build_packet(id, items(0..per_origin, Origin::System), items(per_origin..2 * per_origin, Origin::Human), 5).unwrap();
    let mut public = serde_json::to_value(packet.public()).unwrap();
    public["manifest_hash"] = json!(HASH);
    fs::write(dir.join(format!("{id}.packet.json")), public.to_string()).unwrap();
    fs::write(dir.join(format!("{id}.key.json")), serde_json::to_string(&packet.sealed_key()).unwrap()).unwrap();
    packet.public().items.into_iter().map(|i| i.item_id).collect()
}

async fn start(dir: &Path) -> String {
    let state = AppState::load(dir, None).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state, &[])).await.unwrap() });
    format!("http://{addr}")
}

fn score(annotator: &str, item: &str, v: u8) -> Value {
    json!({
        "annotator_id": annotator, "item_id": item,
        "fluency": v, "meaning": v, "creativity": v, "metaphoricity": v,
    })
}

async fn post(client: &reqwest::Client, base: &str, body: &Value) -> (StatusCode, String) {
    let r = client.post(format!("{base}/api/scores")).json(body).send().await.unwrap();
    (r.status(), r.text().await.unwrap())
}

async fn next(client: &reqwest::Client, base: &str, packet: &str, annotator: &str) -> (StatusCode, String) {
    let r = client
        .get(format!("{base}/api/packets/{packet}/next?annotator={annotator}"))
        .send()
        .await
        .unwrap();
    (r.status(), r.text().await.unwrap())
}

fn stored_lines(dir: &Path, packet: &str) -> Vec<Value> {
    fs::read_to_string(scores_path(dir, packet))
        .unwrap_or_default()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[tokio::test]
async fn valid_score_is_stored_with_lineage() {
    let tmp = TempDir::new().unwrap();
    let items = write_packet(tmp.path(), "p1", 3);
    let base = start(tmp.path()).await;
    let client = reqwest::Client::new();

    let (status, body) = next(&client, &base, "p1", "ann").await;
    assert_eq!(status, StatusCode::OK);
    let item: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(item["item_id"], items[0].as_str());
    assert_eq!(item["progress"]["scored"], 0);
    assert_eq!(item["progress"]["total"], 6);

    let (status, body) = post(&client, &base, &score("ann", &items[0], 4)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let resp: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(resp["progress"]["scored"], 1);

    let lines = stored_lines(tmp.path(), "p1");
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["item_id"], items[0].as_str());
    assert_eq!(lines[0]["creativity"], 4);
    assert_eq!(lines[0]["packet_id"], "p1");
    assert_eq!(lines[0]["manifest_hash"], HASH);

    let (status, body) = next(&client, &base, "p1", "ann").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["item_id"], items[1].as_str());
}

#[tokio::test]
async fn invalid_scores_are_rejected_by_field() {
    let tmp = TempDir::new().unwrap();
    let items = write_packet(tmp.path(), "p1", 2);
    let base = start(tmp.path()).await;
    let client = reqwest::Client::new();

    let mut zero = score("ann", &items[0], 3);
    zero["creativity"] = json!(0);
    let (status, body) = post(&client, &base, &zero).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let errors: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(errors["errors"][0]["field"], "creativity");

    let mut missing = score("ann", &items[0], 3);
    missing.as_object_mut().unwrap().remove("fluency");
    missing["meaning"] = json!("high");
    let (status, body) = post(&client, &base, &missing).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let fields: Vec<String> = serde_json::from_str::<Value>(&body).unwrap()["errors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["field"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(fields, ["fluency", "meaning"]);

    let (status, _) = post(&client, &base, &score("ann", "nope", 3)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let mut wrong_packet = score("ann", &items[0], 3);
    wrong_packet["packet_id"] = json!("other");
    let (status, _) = post(&client, &base, &wrong_packet).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let r = client
        .post(format!("{base}/api/scores"))
        .header("content-type", "application/json")
        .body("{oops")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);

    assert!(stored_lines(tmp.path(), "p1").is_empty());
}

#[tokio::test]
async fn repeated_score_conflicts() {
    let tmp = TempDir::new().unwrap();
    let items = write_packet(tmp.path(), "p1", 2);
    let base = start(tmp.path()).await;
    let client = reqwest::Client::new();
    assert_eq!(post(&client, &base, &score("ann", &items[0], 2)).await.0, StatusCode::CREATED);
    assert_eq!(post(&client, &base, &score("ann", &items[0], 5)).await.0, StatusCode::CONFLICT);
    assert_eq!(post(&client, &base, &score("other", &items[0], 5)).await.0, StatusCode::CREATED);
    assert_eq!(stored_lines(tmp.path(), "p1").len(), 2);
}

#[tokio::test]
async fn unknown_packet_and_missing_annotator() {
    let tmp = TempDir::new().unwrap();
    write_packet(tmp.path(), "p1", 2);
    let base = start(tmp.path()).await;
    let client = reqwest::Client::new();
    assert_eq!(next(&client, &base, "p9", "ann").await.0, StatusCode::NOT_FOUND);
    let r = client.get(format!("{base}/api/packets/p9/progress")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    let r = client.get(format!("{base}/api/packets/p1/next")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn completed_packet_has_no_next_item() {
    let tmp = TempDir::new().unwrap();
    let items = write_packet(tmp.path(), "p1", 2);
    let base = start(tmp.path()).await;
    let client = reqwest::Client::new();
    for item in &items {
        assert_eq!(post(&client, &base, &score("ann", item, 3)).await.0, StatusCode::CREATED);
    }
    let (status, body) = next(&client, &base, "p1", "ann").await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert!(body.is_empty());
    assert_eq!(next(&client, &base, "p1", "fresh").await.0, StatusCode::OK);
}

#[tokio::test]
async fn responses_never_mention_origin() {
    let tmp = TempDir::new().unwrap();
    let items = write_packet(tmp.path(), "p1", 3);
    let base = start(tmp.path()).await;
    let client = reqwest::Client::new();
    let mut bodies = vec![
        client.get(format!("{base}/health")).send().await.unwrap().text().await.unwrap(),
        client.get(format!("{base}/api/packets/p1/progress")).send().await.unwrap().text().await.unwrap(),
    ];
    for item in &items {
        bodies.push(next(&client, &base, "p1", "ann").await.1);
        bodies.push(post(&client, &base, &score("ann", item, 3)).await.1);
    }
    bodies.push(client.get(format!("{base}/api/packets/p1/progress?annotator=ann")).send().await.unwrap().text().await.unwrap());
    for b in &bodies {
        assert!(!b.to_lowercase().contains("origin"), "response leaks origin: {b}");
        assert!(!b.contains("system") && !b.contains("human"), "response hints at origin: {b}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_annotators_lose_no_writes() {
    let tmp = TempDir::new().unwrap();
    let items = write_packet(tmp.path(), "p1", 10);
    let base = start(tmp.path()).await;
    let client = reqwest::Client::new();
    let mut tasks = Vec::new();
    for annotator in ["ann-a", "ann-b"] {
        for item in items.clone() {
            let (client, base) = (client.clone(), base.clone());
            tasks.push(tokio::spawn(async move { post(&client, &base, &score(annotator, &item, 2)).await.0 }));
        }
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::CREATED);
    }
    let progress: Value = client
        .get(format!("{base}/api/packets/p1/progress"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(progress["annotators"]["ann-a"], 20);
    assert_eq!(progress["annotators"]["ann-b"], 20);
    let lines = stored_lines(tmp.path(), "p1");
    assert_eq!(lines.len(), 40);
    for annotator in ["ann-a", "ann-b"] {
        let mut seen: Vec<&str> = lines
            .iter()
            .filter(|l| l["annotator_id"] == annotator)
            .map(|l| l["item_id"].as_str().unwrap())
            .collect();
        seen.sort();
        let mut want: Vec<&str> = items.iter().map(String::as_str).collect();
        want.sort();
        assert_eq!(seen, want);
    }
}

#[tokio::test]
async fn restart_resumes_progress() {
    let tmp = TempDir::new().unwrap();
    let items = write_packet(tmp.path(), "p1", 3);
    let client = reqwest::Client::new();
    let base = start(tmp.path()).await;
    for item in &items[..2] {
        assert_eq!(post(&client, &base, &score("ann", item, 3)).await.0, StatusCode::CREATED);
    }

    let base = start(tmp.path()).await;
    let (status, body) = next(&client, &base, "p1", "ann").await;
    assert_eq!(status, StatusCode::OK);
    let item: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(item["item_id"], items[2].as_str());
    assert_eq!(item["progress"]["scored"], 2);
    assert_eq!(post(&client, &base, &score("ann", &items[0], 3)).await.0, StatusCode::CONFLICT);
}

#[test]
fn serve_subcommand_listens_and_answers() {
    let tmp = TempDir::new().unwrap();
    write_packet(tmp.path(), "p1", 2);
    let mut child = Command::new(env!("CARGO_BIN_EXE_metaphor"))
        .args(["serve", "--packet-dir", tmp.path().to_str().unwrap(), "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let health: Value = rt.block_on(async { reqwest::get(format!("{url}/health")).await.unwrap().json().await.unwrap() });
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(health["status"], "ok");
    assert_eq!(health["packets"], 1);
}

#[test]
fn serve_without_packets_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_metaphor"))
        .args(["serve", "--packet-dir", tmp.path().to_str().unwrap(), "--addr", "127.0.0.1:0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
