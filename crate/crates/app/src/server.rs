//! JSON over HTTP. Readers work on an immutable snapshot; ingestion and
//! deletion build a new snapshot under a writer lock and swap it in.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use kgctx_core::corpus::{ChunkingConfig, Document};
use kgctx_core::embedding_index::SimilarityCache;
use kgctx_core::kg_builder::Triplet;
use kgctx_core::organizer::ChunkOrigin;
use kgctx_core::pipeline::{answer_query, retrieve, PipelineConfig, PipelineError, TreeTrace};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::providers::ProviderSet;
use crate::workspace::{IngestReport, RemoveReport, Workspace};

pub struct AppState {
    snapshot: RwLock<Arc<Workspace>>,
    writer: Mutex<()>,
    providers: ProviderSet,
    pipeline: PipelineConfig,
    chunking: ChunkingConfig,
    /// Where to persist after each write; `None` keeps changes in memory.
    persist: Option<PathBuf>,
}

impl AppState {
    pub fn new(
        workspace: Workspace,
        providers: ProviderSet,
        pipeline: PipelineConfig,
        chunking: ChunkingConfig,
        persist: Option<PathBuf>,
    ) -> Self {
        Self {
            snapshot: RwLock::new(Arc::new(workspace)),
            writer: Mutex::new(()),
            providers,
            pipeline,
            chunking,
            persist,
        }
    }

    pub fn snapshot(&self) -> Arc<Workspace> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Applies `edit` to a copy of the current snapshot and publishes it.
    fn update<T>(&self, edit: impl FnOnce(&mut Workspace) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let _guard = self.writer.lock().expect("writer lock");
        let mut next = (*self.snapshot()).clone();
        let out = edit(&mut next)?;
        if let Some(dir) = &self.persist {
            next.save(dir).map_err(ApiError::internal)?;
        }
        *self.snapshot.write().expect("snapshot lock") = Arc::new(next);
        Ok(out)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, message: e.to_string() }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            _ if e.is_provider_unavailable() => StatusCode::SERVICE_UNAVAILABLE,
            PipelineError::Config(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub question: String,
    /// Seed count and chunk budget.
    pub top_k: Option<usize>,
    pub hops: Option<usize>,
    pub expansion: Option<bool>,
    pub organization: Option<bool>,
}

impl QueryRequest {
    fn config(&self, base: &PipelineConfig) -> Result<PipelineConfig, ApiError> {
        if self.question.trim().is_empty() {
            return Err(ApiError::bad_request("question must not be empty"));
        }
        let mut cfg = *base;
        if let Some(k) = self.top_k {
            if k == 0 {
                return Err(ApiError::bad_request("top_k must be at least 1"));
            }
            cfg.seed_k = k;
            cfg.budget_k = k;
        }
        if let Some(m) = self.hops {
            cfg.hops = m;
        }
        if let Some(x) = self.expansion {
            cfg.expansion = x;
        }
        if let Some(o) = self.organization {
            cfg.organization = o;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ContextItem {
    pub chunk_id: String,
    pub text: String,
    pub tree_rank: Option<usize>,
    pub origin: ChunkOrigin,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryResponse {
    pub answer: String,
    pub model_id: String,
    pub context: Vec<ContextItem>,
    pub trees: Vec<TreeTrace>,
    pub truncated: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRequest {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub triplets: Vec<Triplet>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Health {
    pub status: String,
    /// Number of chunks.
    pub corpus_size: usize,
    pub kg_triplets: usize,
    pub documents: usize,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let c = state.snapshot().counts();
    Json(Health { status: "ok".into(), corpus_size: c.chunks, kg_triplets: c.triplets, documents: c.documents })
}

async fn query(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<QueryResponse>, ApiError> {
    let req: QueryRequest = parse(&body)?;
    let cfg = req.config(&state.pipeline)?;
    blocking(move || {
        let ws = state.snapshot();
        let cache = SimilarityCache::new();
        let out = answer_query(&req.question, ws.kb(), &state.providers.providers(), &cfg, &cache)?;
        let context = out
            .trace
            .bundle
            .entries
            .iter()
            .map(|e| ContextItem {
                chunk_id: e.chunk_id.clone(),
                text: ws.corpus.chunk(&e.chunk_id).map(|c| c.text.clone()).unwrap_or_default(),
                tree_rank: e.tree_rank,
                origin: e.origin,
            })
            .collect();
        Ok(Json(QueryResponse {
            answer: out.answer.text,
            model_id: out.answer.model_id,
            context,
            trees: out.trace.trees,
            truncated: out.prompt.truncated(),
        }))
    })
    .await
}

async fn retrieve_only(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: QueryRequest = parse(&body)?;
    let cfg = req.config(&state.pipeline)?;
    blocking(move || {
        let ws = state.snapshot();
        let trace = retrieve(&req.question, ws.kb(), &state.providers.providers(), &cfg, &SimilarityCache::new())?;
        Ok(Json(trace).into_response())
    })
    .await
}

async fn ingest(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<IngestReport>, ApiError> {
    let req: IngestRequest = parse(&body)?;
    if req.doc_id.trim().is_empty() {
        return Err(ApiError::bad_request("doc_id must not be empty"));
    }
    blocking(move || {
        let doc = Document { doc_id: req.doc_id, title: req.title, text: req.text };
        state.update(|ws| {
            let p = &state.providers;
            ws.ingest(vec![doc], &req.triplets, &state.chunking, p.embedder.as_ref(), p.batch_size, &p.retry)
                .map_err(|e| ApiError::bad_request(format!("{e:#}")))
        })
    })
    .await
    .map(Json)
}

async fn remove(State(state): State<Arc<AppState>>, Path(doc_id): Path<String>) -> Result<Json<RemoveReport>, ApiError> {
    blocking(move || {
        state.update(|ws| {
            ws.remove_document(&doc_id)
                .map_err(|e| ApiError { status: StatusCode::NOT_FOUND, message: e.to_string() })
        })
    })
    .await
    .map(Json)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/query", post(query))
        .route("/retrieve", post(retrieve_only))
        .route("/ingest", post(ingest))
        .route("/documents/{id}", delete(remove))
        .with_state(state)
}

/// A server on its own runtime thread; dropping the handle shuts it down.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn spawn(state: Arc<AppState>, addr: &str) -> Result<ServerHandle> {
    let listener = std::net::TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
            let _ = axum::serve(listener, router(state))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(ServerHandle { addr: local, shutdown: Some(tx), thread: Some(thread) })
}
