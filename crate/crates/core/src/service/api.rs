//! JSON-over-HTTP routes for elicitation sessions and analysis runs.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::store::{SessionStore, StoredSession};
use crate::dist::RngStream;
use crate::elicitation::scale::interpretation_table;
use crate::elicitation::session::now_ms;
use crate::elicitation::{
    feedback_density, prior_band_probabilities, ChipAllocation, EffectModel, HeterogeneityPrior, Judgment,
    OutcomeScale, ScaleKind, Stage,
};
use crate::engine::{McmcConfig, ModelConfig, TrialDataset};
use crate::error::Error;
use crate::ingest::fixtures;
use crate::ingest::report::{run_analysis_with_progress, AnalysisConfig, ReportBundle, ReportFormat};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const FEEDBACK_DRAWS: usize = 100_000;
pub const DENSITY_CAP: usize = 4096;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    pub journal: Option<PathBuf>,
    pub workers: usize,
    pub feedback_draws: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8787)),
            journal: None,
            workers: 2,
            feedback_draws: FEEDBACK_DRAWS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug)]
struct RunState {
    status: RunStatus,
    result: Option<ReportBundle>,
    error: Option<Value>,
}

#[derive(Debug)]
struct Run {
    state: Mutex<RunState>,
    progress: AtomicU64,
    total: u64,
}

pub struct AppState {
    store: Mutex<SessionStore>,
    runs: Mutex<HashMap<String, Arc<Run>>>,
    workers: Arc<Semaphore>,
    feedback_draws: usize,
}

impl AppState {
    pub fn new(store: SessionStore, workers: usize, feedback_draws: usize) -> Arc<Self> {
        Arc::new(Self {
            store: Mutex::new(store),
            runs: Mutex::new(HashMap::new()),
            workers: Arc::new(Semaphore::new(workers.max(1))),
            feedback_draws,
        })
    }
}

type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn conflict(message: impl Into<String>, alternatives: &[&str]) -> Self {
        Self {
            status: StatusCode::CONFLICT,
            body: json!({"error": "state", "message": message.into(), "alternatives": alternatives}),
        }
    }
}

pub fn status_for(err: &Error) -> StatusCode {
    match err {
        Error::State(_) => StatusCode::CONFLICT,
        Error::NotFound(_) => StatusCode::NOT_FOUND,
        Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        Self {
            status: status_for(&err),
            body: json!({"error": err.kind(), "message": err.to_string()}),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rej: JsonRejection) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({"error": "validation", "message": rej.body_text()}),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type Reply = Result<(StatusCode, Value), ApiError>;

fn reply(result: Reply) -> Response {
    match result {
        Ok((status, body)) => (status, Json(body)).into_response(),
        Err(e) => e.into_response(),
    }
}

/// Runs a mutation under the store lock, replaying the stored reply when
/// the idempotency key has been seen before.
fn mutate(state: &Shared, headers: &HeaderMap, route: &str, f: impl FnOnce(&mut SessionStore) -> Reply) -> Response {
    let key = headers
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(|k| format!("{route} {k}"));
    let mut store = state.store.lock().expect("store lock");
    if let Some((status, body)) = key.as_ref().and_then(|k| store.recall(k)) {
        let status = StatusCode::from_u16(*status).unwrap_or(StatusCode::OK);
        return (status, Json(body.clone())).into_response();
    }
    let result = f(&mut store);
    if let Some(k) = key {
        let (status, body) = match &result {
            Ok((s, b)) => (*s, b.clone()),
            Err(e) => (e.status, e.body.clone()),
        };
        if let Err(e) = store.remember(k, status.as_u16(), body) {
            return ApiError::from(e).into_response();
        }
    }
    reply(result)
}

fn session_view(stored: &StoredSession) -> Value {
    let s = &stored.session;
    json!({
        "session": s,
        "question": s.stage.question(),
        "endpoint": s.result.as_ref().map(|r| r.endpoint()),
        "prior": s.provisional_prior(),
    })
}

fn apply(store: &mut SessionStore, id: &str, judgment: Judgment) -> Reply {
    let stored = store.apply(id, judgment, now_ms())?;
    Ok((StatusCode::OK, session_view(stored)))
}

#[derive(Debug, Deserialize)]
struct CreateBody {
    scale: ScaleKind,
    #[serde(default)]
    sigma: Option<f64>,
    #[serde(default)]
    feedback_seed: Option<u64>,
}

async fn create_session(State(state): State<Shared>, headers: HeaderMap, body: Result<Json<CreateBody>, JsonRejection>) -> Response {
    mutate(&state, &headers, "POST /sessions", |store| {
        let Json(body) = body?;
        let scale = OutcomeScale::new(body.scale, body.sigma)?;
        let seed = body.feedback_seed.unwrap_or_else(rand::random);
        let stored = store.create(scale, seed)?;
        Ok((StatusCode::CREATED, session_view(stored)))
    })
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    let store = state.store.lock().expect("store lock");
    reply(store.get(&id).map(|s| (StatusCode::OK, session_view(s))).map_err(ApiError::from))
}

#[derive(Debug, Deserialize)]
struct Stage1Body {
    certain_identical: bool,
}

async fn stage1(
    State(state): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<Stage1Body>, JsonRejection>,
) -> Response {
    mutate(&state, &headers, &format!("POST /sessions/{id}/stage1"), |store| {
        let Json(body) = body?;
        apply(store, &id, Judgment::CertainIdentical { certain: body.certain_identical })
    })
}

#[derive(Debug, Deserialize)]
struct Stage2Body {
    #[serde(default)]
    r_max: Option<f64>,
    #[serde(default)]
    r_min: Option<f64>,
}

async fn stage2(
    State(state): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<Stage2Body>, JsonRejection>,
) -> Response {
    mutate(&state, &headers, &format!("POST /sessions/{id}/stage2"), |store| {
        let Json(body) = body?;
        if let Some(r_min) = body.r_min {
            // validate both before journaling either
            let current = &store.get(&id)?.session;
            let trial = current.apply(Judgment::MinRatio { r_min }, 0)?;
            trial.apply(Judgment::MaxRatio { r_max: body.r_max }, 0)?;
            store.apply(&id, Judgment::MinRatio { r_min }, now_ms())?;
        }
        apply(store, &id, Judgment::MaxRatio { r_max: body.r_max })
    })
}

async fn put_chips(
    State(state): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<ChipAllocation>, JsonRejection>,
) -> Response {
    mutate(&state, &headers, &format!("PUT /sessions/{id}/chips"), |store| {
        let Json(chips) = body?;
        apply(store, &id, Judgment::Chips { chips })
    })
}

#[derive(Debug, Deserialize)]
struct TemplateQuery {
    #[serde(default = "default_nbins")]
    nbins: usize,
    #[serde(default = "default_total")]
    total_chips: u32,
}

fn default_nbins() -> usize {
    9
}
fn default_total() -> u32 {
    20
}

async fn chip_template(State(state): State<Shared>, Path(id): Path<String>, Query(q): Query<TemplateQuery>) -> Response {
    let store = state.store.lock().expect("store lock");
    let result = store
        .get(&id)
        .and_then(|s| s.session.chip_template(q.nbins, q.total_chips))
        .and_then(|c| Ok((StatusCode::OK, serde_json::to_value(c)?)));
    reply(result.map_err(ApiError::from))
}

async fn decline(State(state): State<Shared>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    mutate(&state, &headers, &format!("POST /sessions/{id}/decline"), |store| {
        apply(store, &id, Judgment::DeclineChips)
    })
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FinalizeChoice {
    #[default]
    Elicited,
    TruncatedDefault,
}

#[derive(Debug, Default, Deserialize)]
struct FinalizeBody {
    #[serde(default)]
    choice: FinalizeChoice,
}

fn finalized_view(stored: &StoredSession) -> Value {
    let result = stored.session.result.as_ref().expect("finalized sessions carry a result");
    json!({
        "model": result.model,
        "prior": result.prior,
        "endpoint": result.endpoint(),
        "session": stored.session,
    })
}

async fn finalize(State(state): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    mutate(&state, &headers, &format!("POST /sessions/{id}/finalize"), |store| {
        let body: FinalizeBody = if body.iter().all(u8::is_ascii_whitespace) {
            FinalizeBody::default()
        } else {
            serde_json::from_slice(&body).map_err(Error::from)?
        };
        let stored = store.get(&id)?;
        match stored.session.stage {
            Stage::Finalized => return Ok((StatusCode::OK, finalized_view(stored))),
            Stage::Stage3 => {}
            other => {
                return Err(ApiError::conflict(
                    format!("cannot finalize in {other:?}; answer the current stage first"),
                    &[],
                ))
            }
        }
        let judgment = match body.choice {
            FinalizeChoice::TruncatedDefault => Judgment::DeclineChips,
            FinalizeChoice::Elicited if stored.session.chips.is_none() => {
                return Err(ApiError::conflict(
                    "no chips have been placed; place chips or choose the truncated default prior",
                    &["truncated_default"],
                ))
            }
            FinalizeChoice::Elicited => Judgment::FinalizeElicited,
        };
        let stored = store.apply(&id, judgment, now_ms())?;
        Ok((StatusCode::OK, finalized_view(stored)))
    })
}

/// Pure given the session state and its feedback seed.
pub fn feedback_body(stored: &StoredSession, draws: usize) -> Result<Value, Error> {
    let s = &stored.session;
    let basis = match (s.stage, &s.fit, &s.result) {
        (Stage::Stage1, _, _) => "none",
        (Stage::Stage2, _, _) => "default",
        (Stage::Stage3, Some(_), _) => "elicited",
        (Stage::Stage3, None, _) => "truncated_default",
        (Stage::Finalized, _, Some(r)) if r.prior.is_none() => "none",
        (Stage::Finalized, _, Some(_)) => "final",
        (Stage::Finalized, _, None) => "none",
    };
    let status = if s.stage == Stage::Stage3 && s.fit.is_none() {
        "insufficient_judgments"
    } else {
        "ok"
    };
    let prior = s.provisional_prior();
    let (bands, exact, density) = match &prior {
        Some(p) => {
            let stream = RngStream::new(stored.feedback_seed, 0);
            let bands = prior_band_probabilities(p, draws, stream)?;
            let mut density = feedback_density(p, draws, stream)?;
            density.sample = density.capped_sample(DENSITY_CAP);
            (Some(bands), Some(p.exact_band_probabilities()), Some(density))
        }
        None => (None, None, None),
    };
    Ok(json!({
        "status": status,
        "basis": basis,
        "fit": s.fit,
        "prior": prior,
        "bands": bands,
        "exact_bands": exact,
        "density": density,
        "draws": draws,
    }))
}

async fn feedback(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    let stored = {
        let store = state.store.lock().expect("store lock");
        store.get(&id).cloned()
    };
    let draws = state.feedback_draws;
    let result = match stored {
        Ok(stored) => tokio::task::spawn_blocking(move || feedback_body(&stored, draws))
            .await
            .expect("feedback task panicked"),
        Err(e) => Err(e),
    };
    reply(result.map(|b| (StatusCode::OK, b)).map_err(ApiError::from))
}

#[derive(Debug, Deserialize)]
struct InterpretationQuery {
    #[serde(default = "default_scale")]
    scale: String,
    #[serde(default)]
    sigma: Option<f64>,
}

fn default_scale() -> String {
    "log_or".into()
}

async fn interpretation(Query(q): Query<InterpretationQuery>) -> Response {
    let result = q
        .scale
        .parse::<ScaleKind>()
        .and_then(|k| OutcomeScale::new(k, q.sigma))
        .map(|scale| {
            (
                StatusCode::OK,
                json!({"scale": scale, "omega": scale.omega(), "rows": interpretation_table(&scale)}),
            )
        });
    reply(result.map_err(ApiError::from))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum DatasetInput {
    Bundled(String),
    Inline(TrialDataset),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PriorInput {
    Session { session: String },
    Inline(HeterogeneityPrior),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnalysisRequest {
    dataset: DatasetInput,
    #[serde(default)]
    prior: Option<PriorInput>,
    #[serde(default)]
    effect: Option<EffectModel>,
    #[serde(default)]
    mcmc: McmcConfig,
    #[serde(default)]
    contrasts: Vec<(usize, usize)>,
}

fn prepare_analysis(store: &SessionStore, req: &AnalysisRequest) -> Result<(AnalysisConfig, TrialDataset), Error> {
    let (name, data) = match &req.dataset {
        DatasetInput::Bundled(name) => (name.clone(), fixtures::dataset(name)?),
        DatasetInput::Inline(ds) => {
            ds.validate()?;
            ("inline".to_string(), ds.clone())
        }
    };
    let (default_effect, prior) = match &req.prior {
        None => (EffectModel::FixedEffect, None),
        Some(PriorInput::Inline(p)) => (EffectModel::RandomEffects, Some(*p)),
        Some(PriorInput::Session { session }) => {
            let s = &store.get(session)?.session;
            let result = s
                .result
                .as_ref()
                .ok_or_else(|| Error::State(format!("session {session} is not finalized")))?;
            (result.model, result.prior)
        }
    };
    let effect = req.effect.unwrap_or(default_effect);
    let model = match effect {
        EffectModel::FixedEffect => ModelConfig::fixed_effect(),
        EffectModel::RandomEffects => ModelConfig::random_effects(
            prior.ok_or_else(|| Error::Config("a random-effects run needs a prior".into()))?,
        ),
    };
    let config = AnalysisConfig {
        dataset: name,
        model,
        mcmc: req.mcmc.clone(),
        contrasts: req.contrasts.clone(),
        output: None,
        format: ReportFormat::Json,
    };
    config.validate(&data)?;
    Ok((config, data))
}

async fn create_analysis(
    State(state): State<Shared>,
    headers: HeaderMap,
    body: Result<Json<AnalysisRequest>, JsonRejection>,
) -> Response {
    let shared = state.clone();
    mutate(&state, &headers, "POST /analyses", move |store| {
        let Json(req) = body?;
        let (config, data) = prepare_analysis(store, &req)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let run = Arc::new(Run {
            state: Mutex::new(RunState {
                status: RunStatus::Queued,
                result: None,
                error: None,
            }),
            progress: AtomicU64::new(0),
            total: config.mcmc.total_iterations(),
        });
        shared.runs.lock().expect("runs lock").insert(id.clone(), run.clone());
        let workers = shared.workers.clone();
        tokio::spawn(async move {
            let _permit = workers.acquire_owned().await.expect("semaphore open");
            run.state.lock().expect("run lock").status = RunStatus::Running;
            let worker = run.clone();
            let outcome = tokio::task::spawn_blocking(move || run_analysis_with_progress(&config, &data, Some(&worker.progress))).await;
            let mut st = run.state.lock().expect("run lock");
            match outcome {
                Ok(Ok(bundle)) => {
                    st.status = RunStatus::Done;
                    st.result = Some(bundle);
                }
                Ok(Err(e)) => {
                    st.status = RunStatus::Failed;
                    st.error = Some(json!({"error": e.kind(), "message": e.to_string()}));
                }
                Err(join) => {
                    st.status = RunStatus::Failed;
                    st.error = Some(json!({"error": "internal", "message": join.to_string()}));
                }
            }
        });
        Ok((StatusCode::ACCEPTED, json!({"run_id": id, "status": RunStatus::Queued})))
    })
}

async fn get_analysis(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    let run = state.runs.lock().expect("runs lock").get(&id).cloned();
    let Some(run) = run else {
        return ApiError::from(Error::NotFound(format!("analysis run {id}"))).into_response();
    };
    let st = run.state.lock().expect("run lock");
    let done = run.progress.load(Ordering::Relaxed);
    let progress = if run.total == 0 { 1.0 } else { done as f64 / run.total as f64 };
    let mut body = json!({"run_id": id, "status": st.status, "progress": progress});
    if let Some(r) = &st.result {
        body["result"] = serde_json::to_value(r).unwrap_or(Value::Null);
    }
    if let Some(e) = &st.error {
        body["error"] = e.clone();
    }
    (StatusCode::OK, Json(body)).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/stage1", post(stage1))
        .route("/sessions/{id}/stage2", post(stage2))
        .route("/sessions/{id}/chips", axum::routing::put(put_chips))
        .route("/sessions/{id}/chips/template", get(chip_template))
        .route("/sessions/{id}/decline", post(decline))
        .route("/sessions/{id}/feedback", get(feedback))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/analyses", post(create_analysis))
        .route("/analyses/{id}", get(get_analysis))
        .route("/interpretation", get(interpretation))
        .with_state(state)
}

/// Binds and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> crate::Result<()> {
    let store = match &config.journal {
        Some(path) => SessionStore::open(path)?,
        None => SessionStore::in_memory(),
    };
    let app = router(AppState::new(store, config.workers, config.feedback_draws));
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
