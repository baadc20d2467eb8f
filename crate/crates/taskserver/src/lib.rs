//! Annotation task server.
//!
//! `GET /api/task?worker=ID` issues three distinct random items,
//! `POST /api/answer` records the chosen pair in the triplet file format and
//! `GET /api/items/{id}` serves item images as PNG. Answers go through a
//! single writer task, so concurrent posts never interleave within a line.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mvtriplet::crowdsim::{encode_png, DatasetManifest, Split};
use mvtriplet::model::validate_worker_id;
use mvtriplet::rng::{seeded, SeededRng, STREAM_TASKS};
use mvtriplet::{ItemId, TripletAnnotation};
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;
use tokio::sync::{mpsc, oneshot};
use uuid::Uuid;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub answers_path: PathBuf,
    pub seed: u64,
    /// Restrict tasks to one split; `None` draws from every item.
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub worker: String,
    pub items: [ItemId; 3],
    pub image_urls: [String; 3],
    /// Milliseconds since the Unix epoch.
    pub issued_at: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub task_id: String,
    pub worker: String,
    pub choice: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    AB,
    AC,
    BC,
}

impl Choice {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "AB" => Some(Choice::AB),
            "AC" => Some(Choice::AC),
            "BC" => Some(Choice::BC),
            _ => None,
        }
    }

    /// Orders the presented items as `(pair, pair, remainder)`.
    pub fn arrange(self, [a, b, c]: [ItemId; 3]) -> [ItemId; 3] {
        match self {
            Choice::AB => [a, b, c],
            Choice::AC => [a, c, b],
            Choice::BC => [b, c, a],
        }
    }
}

struct Pending {
    worker: String,
    items: [ItemId; 3],
}

type WriteJob = (String, oneshot::Sender<std::io::Result<()>>);

struct AppState {
    manifest: DatasetManifest,
    pool: Vec<ItemId>,
    rng: Mutex<SeededRng>,
    pending: Mutex<HashMap<String, Pending>>,
    writer: mpsc::Sender<WriteJob>,
}

#[derive(Debug)]
pub struct ServerError(pub String);

impl std::fmt::Display for ServerError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ServerError {}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

/// Opens the answers file for appending and builds the router. Must be
/// called inside a Tokio runtime.
pub async fn build_router(manifest: DatasetManifest, config: ServerConfig) -> Result<Router, ServerError> {
    let pool: Vec<ItemId> = manifest
        .items()
        .iter()
        .filter(|m| config.split.is_none_or(|s| s == m.split))
        .map(|m| m.id)
        .collect();
    if pool.len() < 3 {
        return Err(ServerError(format!(
            "need at least 3 items to build tasks, manifest selection has {}",
            pool.len()
        )));
    }
    let file = tokio::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&config.answers_path)
        .await
        .map_err(|e| ServerError(format!("{}: {e}", config.answers_path.display())))?;
    let (tx, rx) = mpsc::channel(256);
    tokio::spawn(write_answers(file, rx));
    let state = Arc::new(AppState {
        manifest,
        pool,
        rng: Mutex::new(seeded(config.seed, STREAM_TASKS)),
        pending: Mutex::new(HashMap::new()),
        writer: tx,
    });
    Ok(Router::new()
        .route("/api/task", get(issue_task))
        .route("/api/answer", post(record_answer))
        .route("/api/items/{id}", get(item_image))
        .with_state(state))
}

async fn write_answers(mut file: tokio::fs::File, mut rx: mpsc::Receiver<WriteJob>) {
    while let Some((line, ack)) = rx.recv().await {
        let result = async {
            file.write_all(line.as_bytes()).await?;
            file.flush().await?;
            file.sync_data().await
        }
        .await;
        let _ = ack.send(result);
    }
}

#[derive(Deserialize)]
struct TaskQuery {
    worker: Option<String>,
}

async fn issue_task(State(state): State<Arc<AppState>>, Query(q): Query<TaskQuery>) -> Response {
    let Some(worker) = q.worker else {
        return error(StatusCode::BAD_REQUEST, "missing worker parameter");
    };
    if let Err(e) = validate_worker_id(&worker) {
        return error(StatusCode::BAD_REQUEST, e.to_string());
    }
    let items = {
        use rand::seq::index::sample;
        let mut rng = state.rng.lock().expect("rng lock");
        let picks = sample(&mut *rng, state.pool.len(), 3);
        [0, 1, 2].map(|n| state.pool[picks.index(n)])
    };
    let task_id = Uuid::new_v4().to_string();
    let issued_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    state.pending.lock().expect("registry lock").insert(
        task_id.clone(),
        Pending {
            worker: worker.clone(),
            items,
        },
    );
    Json(TaskRecord {
        task_id,
        worker,
        items,
        image_urls: items.map(|id| format!("/api/items/{id}")),
        issued_at,
    })
    .into_response()
}

async fn record_answer(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: AnswerRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed answer: {e}")),
    };
    let Some(choice) = Choice::parse(&req.choice) else {
        return error(
            StatusCode::BAD_REQUEST,
            format!("choice must be AB, AC or BC, got {:?}", req.choice),
        );
    };
    // Consume under the lock so a replay racing this request sees nothing.
    let task = {
        let mut pending = state.pending.lock().expect("registry lock");
        match pending.get(&req.task_id) {
            Some(p) if p.worker == req.worker => pending.remove(&req.task_id),
            _ => None,
        }
    };
    let Some(task) = task else {
        return error(StatusCode::CONFLICT, "unknown or already answered task for this worker");
    };
    let [i, j, k] = choice.arrange(task.items);
    let line = match TripletAnnotation::new(task.worker.clone(), i, j, k) {
        Ok(t) => format!("{t}\n"),
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let (ack_tx, ack_rx) = oneshot::channel();
    let written = match state.writer.send((line, ack_tx)).await {
        Ok(()) => ack_rx.await.map_err(|e| e.to_string()).and_then(|r| r.map_err(|e| e.to_string())),
        Err(e) => Err(e.to_string()),
    };
    match written {
        Ok(()) => Json(serde_json::json!({ "recorded": [i, j, k] })).into_response(),
        Err(e) => {
            // Put the task back so the client can retry.
            state.pending.lock().expect("registry lock").insert(req.task_id, task);
            error(StatusCode::INTERNAL_SERVER_ERROR, format!("could not record answer: {e}"))
        }
    }
}

async fn item_image(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Ok(id) = id.parse::<ItemId>() else {
        return error(StatusCode::NOT_FOUND, format!("no item {id:?}"));
    };
    if state.manifest.get(id).is_none() {
        return error(StatusCode::NOT_FOUND, format!("no item {id}"));
    }
    match state.manifest.render(id).and_then(|t| encode_png(&t)) {
        Ok(png) => ([(header::CONTENT_TYPE, "image/png")], png).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router).await
}
