//! JSON-over-HTTP access to audit sessions, with one snapshot file per
//! session.
//!
//! Mutations of a session are serialized; readers always see the last
//! committed snapshot, never a half-applied mutation. Estimates run on the
//! blocking thread pool.

pub mod api;
mod error;
pub mod store;

pub use error::ApiError;
pub use store::{SessionRecord, Store, StoreError};

use api::{BallotsAccepted, CreateSession, EstimateRequest, EstimateView, PostBallots, SessionList};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dirtree_audit::rng::derive_seed;
use dirtree_audit::{AuditSession, Irv};
use rand::Rng;
use serde::de::DeserializeOwned;
use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use store::DecisionRecord;

/// Upper bound on the draw count a single estimate request may ask for.
pub const MAX_DRAWS: u32 = 1_000_000;

const SESSION_SEED_PURPOSE: u64 = 3;

struct Slot {
    writer: tokio::sync::Mutex<()>,
    current: RwLock<Arc<SessionRecord>>,
    deleted: AtomicBool,
}

impl Slot {
    fn new(rec: SessionRecord) -> Arc<Self> {
        Arc::new(Slot {
            writer: tokio::sync::Mutex::new(()),
            current: RwLock::new(Arc::new(rec)),
            deleted: AtomicBool::new(false),
        })
    }

    fn snapshot(&self) -> Arc<SessionRecord> {
        self.current.read().unwrap().clone()
    }
}

struct Inner {
    store: Store,
    sessions: RwLock<BTreeMap<String, Arc<Slot>>>,
    seed: Option<u64>,
}

/// Shared service state.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Opens the data directory and loads every stored session. With a
    /// `seed`, sessions created without an explicit seed get one derived
    /// from it and their id; otherwise they get a random one.
    pub fn open(data_dir: &std::path::Path, seed: Option<u64>) -> Result<Self, StoreError> {
        let store = Store::open(data_dir)?;
        let sessions = store
            .load_all()?
            .into_iter()
            .map(|r| (r.id.clone(), Slot::new(r)))
            .collect();
        Ok(AppState {
            inner: Arc::new(Inner {
                store,
                sessions: RwLock::new(sessions),
                seed,
            }),
        })
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.inner.sessions.read().unwrap().keys().cloned().collect()
    }

    /// The committed record of a session.
    pub fn record(&self, id: &str) -> Option<Arc<SessionRecord>> {
        self.slot(id).map(|s| s.snapshot())
    }

    fn slot(&self, id: &str) -> Option<Arc<Slot>> {
        self.inner.sessions.read().unwrap().get(id).cloned()
    }

    fn fresh_id(&self) -> String {
        let sessions = self.inner.sessions.read().unwrap();
        loop {
            let id = format!("{:032x}", rand::rng().random::<u128>());
            if !sessions.contains_key(&id) {
                return id;
            }
        }
    }

    /// Seeds handed out by default stay below 2^53 so JSON clients that
    /// parse numbers as doubles read them exactly.
    fn default_seed(&self, id: &str) -> u64 {
        let raw = match self.inner.seed {
            Some(seed) => derive_seed(seed, SESSION_SEED_PURPOSE, u64::from_str_radix(&id[..16], 16).unwrap()),
            None => rand::rng().random(),
        };
        raw >> 11
    }

    /// Applies `f` to a copy of the session and commits the copy, on disk
    /// and in memory, only if `f` succeeds.
    async fn mutate<T, F>(&self, id: &str, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut SessionRecord) -> Result<T, ApiError> + Send + 'static,
    {
        let slot = self.slot(id).ok_or_else(|| ApiError::not_found(id))?;
        let _writer = slot.writer.lock().await;
        if slot.deleted.load(Ordering::SeqCst) {
            return Err(ApiError::not_found(id));
        }
        let mut rec = (*slot.snapshot()).clone();
        let store = self.inner.store.clone();
        let (rec, out) = tokio::task::spawn_blocking(move || {
            let out = f(&mut rec)?;
            rec.updated_at = store::now();
            store.save(&rec).map_err(|e| ApiError::internal(e.to_string()))?;
            Ok::<_, ApiError>((rec, out))
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
        *slot.current.write().unwrap() = Arc::new(rec);
        Ok(out)
    }
}

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = parse_json(&body)?;
    let id = state.fresh_id();
    let resolved = req.resolve(state.default_seed(&id))?;
    let session = AuditSession::start(resolved.meta, resolved.config)?;
    let at = store::now();
    let rec = SessionRecord {
        id: id.clone(),
        created_at: at,
        updated_at: at,
        matched_from_tree_a0: resolved.matched_from_tree_a0,
        session,
        decisions: Vec::new(),
    };
    state
        .inner
        .store
        .save(&rec)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let view = api::session_view(&rec);
    state.inner.sessions.write().unwrap().insert(id, Slot::new(rec));
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn list_sessions(State(state): State<AppState>) -> Json<SessionList> {
    let mut records: Vec<Arc<SessionRecord>> = state
        .inner
        .sessions
        .read()
        .unwrap()
        .values()
        .map(|s| s.snapshot())
        .collect();
    records.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
    Json(SessionList {
        sessions: records.iter().map(|r| api::session_summary(r)).collect(),
    })
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let rec = state.record(&id).ok_or_else(|| ApiError::not_found(&id))?;
    Ok(Json(api::session_view(&rec)).into_response())
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let slot = state.slot(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let _writer = slot.writer.lock().await;
    if slot.deleted.swap(true, Ordering::SeqCst) {
        return Err(ApiError::not_found(&id));
    }
    state.inner.sessions.write().unwrap().remove(&id);
    state
        .inner
        .store
        .remove(&id)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn post_ballots(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<BallotsAccepted>, ApiError> {
    let req: PostBallots = parse_json(&body)?;
    let out = state
        .mutate(&id, move |rec| {
            let batch = req.to_multiset(&rec.session.meta().roster)?;
            rec.session.observe(&batch)?;
            Ok(batch.total())
        })
        .await?;
    let rec = state.record(&id).ok_or_else(|| ApiError::not_found(&id))?;
    Ok(Json(BallotsAccepted {
        added: out,
        n: rec.session.sample_size(),
        remaining: rec.session.remaining(),
        status: rec.session.status(),
        updated_at: store::timestamp(&rec.updated_at),
    }))
}

async fn estimate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<EstimateView>, ApiError> {
    let req: EstimateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        EstimateRequest::default()
    } else {
        parse_json(&body)?
    };
    if req.draws.is_some_and(|d| d > MAX_DRAWS) {
        return Err(ApiError::unprocessable(
            "invalid-config",
            format!("draws may not exceed {MAX_DRAWS}"),
        ));
    }
    let view = state
        .mutate(&id, move |rec| {
            let s = &mut rec.session;
            let draws = req.draws.unwrap_or(s.config().draws_per_estimate);
            let irv = Irv { tie: s.config().tie };
            s.estimate_posterior_with(&irv, draws)?;
            let decision = s.decide()?;
            rec.decisions.push(DecisionRecord {
                decision,
                at: store::now(),
            });
            let i = rec.decisions.len() - 1;
            Ok(EstimateView {
                estimate: api::history_entry(rec, i),
                decision,
                status: rec.session.status(),
            })
        })
        .await?;
    Ok(Json(view))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such route")
}

/// The API routes; with `ui_dir`, static files from that directory are
/// served for every other path, falling back to its `index.html`.
pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/ballots", post(post_ballots))
        .route("/sessions/{id}/estimate", post(estimate))
        .with_state(state);
    match ui_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            api.fallback_service(
                tower_http::services::ServeDir::new(dir)
                    .fallback(tower_http::services::ServeFile::new(index)),
            )
        }
        None => api.fallback(not_found),
    }
}

#[derive(Clone, Debug)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub data_dir: PathBuf,
    pub seed: Option<u64>,
    pub ui_dir: Option<PathBuf>,
}

#[derive(thiserror::Error, Debug)]
pub enum ServeError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("UI directory {0} does not exist")]
    MissingUi(PathBuf),
}

pub async fn serve(cfg: ServeConfig) -> Result<(), ServeError> {
    if let Some(dir) = &cfg.ui_dir {
        if !dir.is_dir() {
            return Err(ServeError::MissingUi(dir.clone()));
        }
    }
    let state = AppState::open(&cfg.data_dir, cfg.seed)?;
    let loaded = state.session_ids().len();
    let listener = tokio::net::TcpListener::bind(cfg.addr).await?;
    eprintln!(
        "listening on http://{} ({loaded} sessions from {})",
        listener.local_addr()?,
        cfg.data_dir.display()
    );
    axum::serve(listener, router(state, cfg.ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Runs [`serve`] on a fresh multi-threaded runtime until interrupted.
pub fn serve_blocking(cfg: ServeConfig) -> Result<(), ServeError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(cfg))
}
