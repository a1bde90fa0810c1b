//! HTTP endpoint that hands out packet items and collects scores.
//!
//! Only the annotator-facing packet file is loaded, so item origin is never
//! in memory and cannot leak into a response.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::Context;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use metaphor_core::evalkit::{Dimension, PublicPacket, ScoreRecord, Span};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::artifact::HASH_FIELD;
use crate::error::usage;

const PACKET_SUFFIX: &str = ".packet.json";

pub fn scores_path(dir: &Path, packet_id: &str) -> PathBuf {
    dir.join(format!("{packet_id}.scores.jsonl"))
}

struct PacketState {
    public: PublicPacket,
    manifest_hash: Option<String>,
    scores_path: PathBuf,
    /// annotator → scored item ids
    scored: HashMap<String, HashSet<String>>,
}

impl PacketState {
    fn progress(&self, annotator: &str) -> Progress {
        Progress {
            scored: self.scored.get(annotator).map_or(0, HashSet::len),
            total: self.public.items.len(),
        }
    }
}

#[derive(Default)]
struct Inner {
    packets: BTreeMap<String, PacketState>,
    item_owner: HashMap<String, String>,
}

#[derive(Clone, Default)]
pub struct AppState(Arc<Mutex<Inner>>);

impl AppState {
    /// Loads every `<id>.packet.json` in `dir` (or only `only`) and replays
    /// existing score files so sessions resume after a restart.
    pub fn load(dir: &Path, only: Option<&str>) -> anyhow::Result<Self> {
        let mut inner = Inner::default();
        let entries = fs::read_dir(dir).map_err(|e| usage(format!("cannot read packet directory {}: {e}", dir.display())))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(PACKET_SUFFIX)))
            .collect();
        files.sort();
        for path in files {
            let raw = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let doc: Value = serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?;
            let manifest_hash = doc.get(HASH_FIELD).and_then(Value::as_str).map(str::to_string);
            let public: PublicPacket = serde_json::from_value(doc).with_context(|| format!("parsing {}", path.display()))?;
            if only.is_some_and(|id| id != public.packet_id) {
                continue;
            }
            let sp = scores_path(dir, &public.packet_id);
            let mut state = PacketState {
                manifest_hash,
                scores_path: sp.clone(),
                scored: HashMap::new(),
                public,
            };
            if sp.is_file() {
                let raw = fs::read_to_string(&sp).with_context(|| format!("reading {}", sp.display()))?;
                for (i, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    match serde_json::from_str::<ScoreRecord>(line) {
                        Ok(r) => {
                            state.scored.entry(r.annotator_id).or_default().insert(r.item_id);
                        }
                        Err(e) => log::warn!("{}:{}: ignoring unreadable score line: {e}", sp.display(), i + 1),
                    }
                }
            }
            for item in &state.public.items {
                if let Some(prev) = inner.item_owner.insert(item.item_id.clone(), state.public.packet_id.clone()) {
                    return Err(usage(format!("item {} appears in packets {prev} and {}", item.item_id, state.public.packet_id)));
                }
            }
            log::info!("serving packet {} ({} items)", state.public.packet_id, state.public.items.len());
            inner.packets.insert(state.public.packet_id.clone(), state);
        }
        if inner.packets.is_empty() {
            return Err(usage(match only {
                Some(id) => format!("no packet `{id}` in {}", dir.display()),
                None => format!("no *{PACKET_SUFFIX} files in {}", dir.display()),
            }));
        }
        Ok(Self(Arc::new(Mutex::new(inner))))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct Progress {
    pub scored: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct NextItem {
    pub packet_id: String,
    pub item_id: String,
    pub text: String,
    pub highlight_span: Span,
    pub progress: Progress,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Deserialize)]
pub struct AnnotatorQuery {
    annotator: Option<String>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn field_errors(errors: Vec<FieldError>) -> Response {
    (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "errors": errors }))).into_response()
}

fn missing_annotator() -> Response {
    field_errors(vec![FieldError {
        field: "annotator".into(),
        message: "query parameter `annotator` is required".into(),
    }])
}

async fn next_item(State(state): State<AppState>, UrlPath(id): UrlPath<String>, Query(q): Query<AnnotatorQuery>) -> Response {
    let Some(annotator) = q.annotator.filter(|a| !a.trim().is_empty()) else {
        return missing_annotator();
    };
    let inner = state.0.lock().expect("state lock");
    let Some(p) = inner.packets.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown packet `{id}`"));
    };
    let done = p.scored.get(&annotator);
    let next = p.public.items.iter().find(|i| done.is_none_or(|d| !d.contains(&i.item_id)));
    match next {
        None => StatusCode::NO_CONTENT.into_response(),
        Some(item) => Json(NextItem {
            packet_id: id.clone(),
            item_id: item.item_id.clone(),
            text: item.text.clone(),
            highlight_span: item.highlight_span,
            progress: p.progress(&annotator),
        })
        .into_response(),
    }
}

async fn progress(State(state): State<AppState>, UrlPath(id): UrlPath<String>, Query(q): Query<AnnotatorQuery>) -> Response {
    let inner = state.0.lock().expect("state lock");
    let Some(p) = inner.packets.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown packet `{id}`"));
    };
    match q.annotator.filter(|a| !a.trim().is_empty()) {
        Some(a) => {
            let pr = p.progress(&a);
            Json(json!({
                "packet_id": id,
                "annotator": a,
                "scored": pr.scored,
                "total": pr.total,
                "remaining": pr.total - pr.scored,
            }))
            .into_response()
        }
        None => {
            let counts: BTreeMap<&str, usize> = p.scored.iter().map(|(a, s)| (a.as_str(), s.len())).collect();
            Json(json!({ "packet_id": id, "total": p.public.items.len(), "annotators": counts })).into_response()
        }
    }
}

/// Checks a submitted body field by field, like the file ingester does.
fn parse_score(body: &Value) -> Result<(ScoreRecord, Option<String>), Vec<FieldError>> {
    let mut errors = Vec::new();
    let mut fail = |field: &str, message: &str| {
        errors.push(FieldError {
            field: field.into(),
            message: message.into(),
        })
    };
    let Some(obj) = body.as_object() else {
        fail("body", "expected a JSON object");
        return Err(errors);
    };
    let mut text = |field: &str| match obj.get(field) {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        Some(Value::String(_)) => {
            fail(field, "must be non-empty");
            String::new()
        }
        Some(_) => {
            fail(field, "must be a string");
            String::new()
        }
        None => {
            fail(field, "is required");
            String::new()
        }
    };
    let annotator_id = text("annotator_id");
    let item_id = text("item_id");
    let mut dims = [0u8; 4];
    for (slot, d) in dims.iter_mut().zip(Dimension::ALL) {
        let name = serde_json::to_value(d).expect("dimension").as_str().expect("string").to_string();
        match obj.get(&name) {
            Some(v) => match v.as_u64() {
                Some(n @ 1..=5) => *slot = n as u8,
                _ => fail(&name, "must be an integer from 1 to 5"),
            },
            None => fail(&name, "is required"),
        }
    }
    let packet_id = match obj.get("packet_id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            fail("packet_id", "must be a string");
            None
        }
    };
    if !errors.is_empty() {
        return Err(errors);
    }
    let [fluency, meaning, creativity, metaphoricity] = dims;
    Ok((
        ScoreRecord {
            annotator_id,
            item_id,
            fluency,
            meaning,
            creativity,
            metaphoricity,
        },
        packet_id,
    ))
}

#[derive(Serialize)]
struct StoredScore<'a> {
    #[serde(flatten)]
    record: &'a ScoreRecord,
    packet_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest_hash: Option<&'a str>,
}

fn append_line(path: &Path, line: &[u8]) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line)?;
    f.sync_data()
}

async fn submit(State(state): State<AppState>, body: Result<Json<Value>, JsonRejection>) -> Response {
    let body = match body {
        Ok(Json(b)) => b,
        Err(e) => {
            return field_errors(vec![FieldError {
                field: "body".into(),
                message: e.body_text(),
            }])
        }
    };
    let (record, packet_hint) = match parse_score(&body) {
        Ok(r) => r,
        Err(e) => return field_errors(e),
    };
    let mut inner = state.0.lock().expect("state lock");
    let owner = inner.item_owner.get(&record.item_id).cloned();
    let packet_id = match (owner, packet_hint) {
        (Some(o), Some(h)) if o != h => {
            return field_errors(vec![FieldError {
                field: "item_id".into(),
                message: format!("item is not part of packet `{h}`"),
            }])
        }
        (Some(o), _) => o,
        (None, _) => {
            return field_errors(vec![FieldError {
                field: "item_id".into(),
                message: format!("unknown item `{}`", record.item_id),
            }])
        }
    };
    let p = inner.packets.get_mut(&packet_id).expect("owner map and packets agree");
    if p.scored.get(&record.annotator_id).is_some_and(|s| s.contains(&record.item_id)) {
        return error(
            StatusCode::CONFLICT,
            format!("{} already scored {}", record.annotator_id, record.item_id),
        );
    }
    let stored = StoredScore {
        record: &record,
        packet_id: &packet_id,
        manifest_hash: p.manifest_hash.as_deref(),
    };
    let mut line = serde_json::to_vec(&stored).expect("score serializes");
    line.push(b'\n');
    if let Err(e) = append_line(&p.scores_path, &line) {
        log::error!("cannot append to {}: {e}", p.scores_path.display());
        return error(StatusCode::INTERNAL_SERVER_ERROR, "could not persist the score");
    }
    p.scored.entry(record.annotator_id.clone()).or_default().insert(record.item_id.clone());
    let progress = p.progress(&record.annotator_id);
    (
        StatusCode::CREATED,
        Json(json!({
            "packet_id": packet_id,
            "item_id": record.item_id,
            "annotator_id": record.annotator_id,
            "progress": progress,
        })),
    )
        .into_response()
}

async fn health(State(state): State<AppState>) -> Response {
    let n = state.0.lock().expect("state lock").packets.len();
    Json(json!({ "status": "ok", "packets": n })).into_response()
}

pub fn router(state: AppState, allowed_origins: &[String]) -> Router {
    let origins = if allowed_origins.is_empty() {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(allowed_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    let cors = CorsLayer::new().allow_origin(origins).allow_methods(Any).allow_headers(Any);
    Router::new()
        .route("/health", get(health))
        .route("/api/packets/{id}/next", get(next_item))
        .route("/api/packets/{id}/progress", get(progress))
        .route("/api/scores", post(submit))
        .layer(cors)
        .with_state(state)
}

/// Serves until ctrl-c. Prints the bound address on stdout first.
pub fn run(packet_dir: &Path, packet_id: Option<&str>, addr: &str, allowed_origins: &[String]) -> anyhow::Result<()> {
    let state = AppState::load(packet_dir, packet_id)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| usage(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr()?;
        println!("listening on http://{local}");
        std::io::stdout().flush()?;
        axum::serve(listener, router(state, allowed_origins))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
