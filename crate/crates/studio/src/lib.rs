//! HTTP/JSON service for reviewing discrepancy prior samples.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hdsa_core::hyper_init::InitOptions;
use hdsa_core::scenario::ScenarioConfig;
use hdsa_core::studio::{HyperPatch, Session, View};
use hdsa_core::Error;
use serde::Deserialize;
use serde_json::{json, Value};
use uuid::Uuid;

/// Largest sample count or ensemble size accepted per request.
pub const MAX_DRAWS: usize = 100_000;

type Shared = Arc<RwLock<Session>>;

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<Uuid, Shared>>>,
    init: InitOptions,
}

impl AppState {
    pub fn new(init: InitOptions) -> Self {
        Self {
            sessions: Arc::default(),
            init,
        }
    }

    pub fn insert(&self, session: Session) -> Uuid {
        let id = session.id();
        self.sessions
            .write()
            .expect("session table poisoned")
            .insert(id, Arc::new(RwLock::new(session)));
        id
    }

    fn get(&self, id: Uuid) -> Result<Shared, ApiError> {
        self.sessions
            .read()
            .map_err(|_| ApiError::internal("session table poisoned"))?
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session {id}")).into())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn internal(message: &str) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal",
            message: message.to_string(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not-found"),
            Error::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation-error"),
            Error::NoData => (StatusCode::CONFLICT, "no-data"),
            Error::UnsupportedView(_) => (StatusCode::BAD_REQUEST, "unsupported-view"),
            Error::InvalidConfig(_) | Error::InvalidInput(_) | Error::Shape { .. } | Error::Json(_) => {
                (StatusCode::BAD_REQUEST, "invalid-input")
            }
            Error::TooLarge(_) => (StatusCode::PAYLOAD_TOO_LARGE, "too-large"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "computation-error"),
        };
        Self {
            status,
            kind,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.kind, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs CPU-bound session work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|_| ApiError::internal("worker task failed"))?
}

fn read<T>(s: &Shared, f: impl FnOnce(&Session) -> hdsa_core::Result<T>) -> ApiResult<T> {
    let guard = s.read().map_err(|_| ApiError::internal("session poisoned"))?;
    Ok(f(&guard)?)
}

fn write<T>(s: &Shared, f: impl FnOnce(&mut Session) -> hdsa_core::Result<T>) -> ApiResult<T> {
    let mut guard = s.write().map_err(|_| ApiError::internal("session poisoned"))?;
    Ok(f(&mut guard)?)
}

fn check_count(n: usize) -> ApiResult<()> {
    if n > MAX_DRAWS {
        return Err(Error::TooLarge(n).into());
    }
    Ok(())
}

fn hyper_body(s: &Session) -> Value {
    json!({"hyperparams": s.hyper(), "stale": s.is_stale(), "audit": s.audit()})
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/import", post(import_session))
        .route("/session/{id}/hyperparams", get(get_hyper).patch(patch_hyper))
        .route("/session/{id}/samples", post(generate_samples))
        .route("/session/{id}/overview", get(overview))
        .route("/session/{id}/sample/{i}/{k}", get(inspect))
        .route("/session/{id}/timeseries", get(timeseries))
        .route("/session/{id}/posterior", get(posterior))
        .route("/session/{id}/export", get(export))
        .with_state(state)
}

async fn create_session(
    State(app): State<AppState>,
    Json(config): Json<ScenarioConfig>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let opts = app.init.clone();
    let session = blocking(move || Ok(Session::create(config, &opts)?)).await?;
    let body = json!({"id": session.id(), "hyperparams": session.hyper()});
    app.insert(session);
    Ok((StatusCode::CREATED, Json(body)))
}

async fn import_session(State(app): State<AppState>, Json(snapshot): Json<Value>) -> ApiResult<(StatusCode, Json<Value>)> {
    let session = blocking(move || Ok(Session::restore(snapshot)?)).await?;
    let body = json!({"id": session.id(), "hyperparams": session.hyper()});
    app.insert(session);
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_hyper(State(app): State<AppState>, Path(id): Path<Uuid>) -> ApiResult<Json<Value>> {
    let s = app.get(id)?;
    Ok(Json(read(&s, |s| Ok(hyper_body(s)))?))
}

async fn patch_hyper(
    State(app): State<AppState>,
    Path(id): Path<Uuid>,
    Json(patch): Json<HyperPatch>,
) -> ApiResult<Json<Value>> {
    let s = app.get(id)?;
    let body = blocking(move || {
        write(&s, |s| {
            s.update_hyperparams(patch)?;
            Ok(hyper_body(s))
        })
    })
    .await?;
    Ok(Json(body))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplesRequest {
    q: Option<usize>,
    seed: Option<u64>,
}

async fn generate_samples(
    State(app): State<AppState>,
    Path(id): Path<Uuid>,
    body: Option<Json<SamplesRequest>>,
) -> ApiResult<Json<Value>> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    if let Some(q) = req.q {
        check_count(q)?;
    }
    let s = app.get(id)?;
    let body = blocking(move || {
        write(&s, |s| {
            let d = s.generate_samples(req.q, req.seed)?;
            Ok(json!({"q": d.q(), "p": d.p(), "records": d.n_records(), "seed": d.seed}))
        })
    })
    .await?;
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
struct OverviewQuery {
    view: Option<String>,
}

async fn overview(
    State(app): State<AppState>,
    Path(id): Path<Uuid>,
    Query(q): Query<OverviewQuery>,
) -> ApiResult<Json<Value>> {
    let view: View = q.view.as_deref().unwrap_or("control").parse()?;
    let s = app.get(id)?;
    let payload = read(&s, |s| s.overview(view))?;
    Ok(Json(serde_json::to_value(payload).map_err(Error::from)?))
}

async fn inspect(State(app): State<AppState>, Path((id, i, k)): Path<(Uuid, usize, usize)>) -> ApiResult<Json<Value>> {
    let s = app.get(id)?;
    let payload = read(&s, |s| s.inspect(i, k))?;
    Ok(Json(serde_json::to_value(payload).map_err(Error::from)?))
}

async fn timeseries(State(app): State<AppState>, Path(id): Path<Uuid>) -> ApiResult<Json<Value>> {
    let s = app.get(id)?;
    let payload = blocking(move || read(&s, |s| s.timeseries())).await?;
    Ok(Json(serde_json::to_value(payload).map_err(Error::from)?))
}

#[derive(Debug, Deserialize)]
struct PosteriorQuery {
    n: Option<usize>,
    seed: Option<u64>,
}

async fn posterior(
    State(app): State<AppState>,
    Path(id): Path<Uuid>,
    Query(q): Query<PosteriorQuery>,
) -> ApiResult<Json<Value>> {
    let n = q.n.unwrap_or(100);
    check_count(n)?;
    let s = app.get(id)?;
    let payload = blocking(move || read(&s, |s| s.posterior(n, q.seed))).await?;
    Ok(Json(serde_json::to_value(payload).map_err(Error::from)?))
}

async fn export(State(app): State<AppState>, Path(id): Path<Uuid>) -> ApiResult<Json<Value>> {
    let s = app.get(id)?;
    Ok(Json(read(&s, |s| Ok(s.export()))?))
}
