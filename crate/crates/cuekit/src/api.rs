//! JSON HTTP API over a project store.
//!
//! Edits are serialized per project behind an async mutex and applied to
//! a copy of the cached project, which is swapped in only after it has
//! been written. Reads go to the cache and never wait on a running stage.
//! Clients guard edits with `If-Match: "<revision>"`; a stale revision is
//! answered with 409.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use base64::Engine as _;
use cuekit_core::diag::Diagnostic;
use cuekit_core::notation::parse_midi;
use cuekit_core::vision::VisualReport;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::pipeline::{Engine, Outputs, PipelineError};
use crate::project::{ClipRef, EditError, Project, Stage, StoreError};

pub struct AppState {
    engine: Arc<Engine>,
    cache: RwLock<HashMap<String, Arc<Project>>>,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    jobs: RwLock<HashMap<String, Job>>,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new(engine: Engine) -> Arc<Self> {
        Arc::new(AppState {
            engine: Arc::new(engine),
            cache: RwLock::default(),
            locks: Mutex::default(),
            jobs: RwLock::default(),
            next_job: AtomicU64::new(1),
        })
    }

    fn lock_for(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }

    async fn project(&self, id: &str) -> Result<Arc<Project>, ApiError> {
        if let Some(p) = self.cache.read().unwrap_or_else(|e| e.into_inner()).get(id) {
            return Ok(p.clone());
        }
        let engine = self.engine.clone();
        let owned = id.to_string();
        let p = Arc::new(blocking(move || engine.store.load(&owned).map_err(ApiError::from)).await?);
        self.cache
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.to_string(), p.clone());
        Ok(p)
    }

    fn publish(&self, p: Project) -> Arc<Project> {
        let p = Arc::new(p);
        self.cache
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(p.id.clone(), p.clone());
        p
    }

    fn set_job(&self, job: Job) {
        self.jobs.write().unwrap_or_else(|e| e.into_inner()).insert(job.id.clone(), job);
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    diagnostics: Vec<Diagnostic>,
    current_revision: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            kind,
            message: message.into(),
            diagnostics: Vec::new(),
            current_revision: None,
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.kind, "message": self.message});
        if !self.diagnostics.is_empty() {
            body["diagnostics"] = json!(self.diagnostics);
        }
        if let Some(r) = self.current_revision {
            body["revision"] = json!(r);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Stage(_) => ApiError::new(StatusCode::BAD_REQUEST, "stage", e.to_string()),
            PipelineError::Invalid(m) => ApiError::invalid(m),
            PipelineError::Backend(m) => ApiError::new(StatusCode::BAD_GATEWAY, "backend", m),
            PipelineError::Store(s) => s.into(),
            PipelineError::Setup(m) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "setup", m),
        }
    }
}

impl From<EditError> for ApiError {
    fn from(e: EditError) -> Self {
        match e {
            EditError::Stage(s) => ApiError::new(StatusCode::BAD_REQUEST, "stage", s.to_string()),
            EditError::Invalid { message, diagnostics } => ApiError {
                diagnostics,
                ..ApiError::invalid(message)
            },
        }
    }
}

/// The `If-Match` revision, if the client sent one.
fn precondition(headers: &HeaderMap) -> Result<Option<u64>, ApiError> {
    let Some(v) = headers.get(header::IF_MATCH) else {
        return Ok(None);
    };
    let text = v.to_str().unwrap_or("").trim();
    let text = text.strip_prefix("W/").unwrap_or(text).trim_matches('"');
    text.parse()
        .map(Some)
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "bad_precondition", "If-Match must carry a revision number"))
}

fn check_revision(p: &Project, expected: Option<u64>) -> Result<(), ApiError> {
    match expected {
        Some(r) if r != p.revision => Err(ApiError {
            current_revision: Some(p.revision),
            ..ApiError::new(
                StatusCode::CONFLICT,
                "stale_revision",
                format!("the project is at revision {}, not {r}", p.revision),
            )
        }),
        _ => Ok(()),
    }
}

/// Everything a client needs to show a project.
#[derive(Serialize)]
struct ProjectView<'a> {
    #[serde(flatten)]
    project: &'a Project,
    spots: &'a [f64],
    report: Option<&'a VisualReport>,
    abc: Option<&'a str>,
    scheme: Option<Value>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<Diagnostic>,
}

fn view(p: &Project, warnings: Vec<Diagnostic>, status: StatusCode) -> Response {
    let v = ProjectView {
        project: p,
        spots: &p.spots.onsets,
        report: p.report.as_ref(),
        abc: p.abc.as_deref(),
        scheme: p.scheme.as_ref().and_then(|s| serde_json::to_value(s).ok()),
        warnings,
    };
    let mut r = (status, Json(v)).into_response();
    if let Ok(tag) = HeaderValue::from_str(&format!("\"{}\"", p.revision)) {
        r.headers_mut().insert(header::ETAG, tag);
    }
    r
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/projects", get(list_projects).post(create_project))
        .route("/projects/:id", get(get_project))
        .route("/projects/:id/spots", put(put_spots))
        .route("/projects/:id/description", put(put_description))
        .route("/projects/:id/abc", put(put_abc))
        .route("/projects/:id/scheme", put(put_scheme))
        .route("/projects/:id/generate", post(run_generate))
        .route("/projects/:id/assess", post(run_assess))
        .route("/projects/:id/arrange", post(run_arrange))
        .route("/projects/:id/render", post(run_render))
        .route("/projects/:id/render/latest", get(latest_render))
        .route("/projects/:id/transcripts", get(transcripts))
        .route("/jobs/:id", get(get_job))
        .with_state(state)
}

/// Serves the API until interrupted.
pub async fn serve(engine: Engine, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(engine)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn list_projects(State(s): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let engine = s.engine.clone();
    let ids = blocking(move || engine.store.list().map_err(ApiError::from)).await?;
    let mut items = Vec::with_capacity(ids.len());
    for id in ids {
        let p = s.project(&id).await?;
        items.push(json!({"id": p.id, "name": p.name, "stage": p.stage, "revision": p.revision}));
    }
    Ok(Json(json!({ "projects": items })).into_response())
}

#[derive(Deserialize)]
struct CreateRequest {
    #[serde(default)]
    name: String,
    duration: Option<f64>,
    #[serde(default)]
    frame_rate: Option<f64>,
    /// Hand-placed spots.
    onsets: Option<Vec<f64>>,
    /// A reference MIDI file, base64, to spot from instead.
    reference_midi: Option<String>,
}

async fn create_project(State(s): State<Arc<AppState>>, Json(req): Json<CreateRequest>) -> Result<Response, ApiError> {
    let engine = s.engine.clone();
    let p = blocking(move || {
        let clip = |duration: f64| ClipRef {
            source: None,
            duration,
            frame_rate: req.frame_rate,
        };
        match (req.onsets, req.reference_midi) {
            (Some(onsets), None) => {
                let d = req.duration.ok_or_else(|| ApiError::invalid("duration is required with onsets"))?;
                Ok(engine.create_with_spots(&req.name, onsets, clip(d))?)
            }
            (None, Some(b64)) => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64.trim())
                    .map_err(|e| ApiError::invalid(format!("reference_midi is not base64: {e}")))?;
                let song = parse_midi(&bytes).map_err(|e| ApiError {
                    diagnostics: vec![Diagnostic::error(e.to_string())],
                    ..ApiError::invalid("reference_midi does not parse")
                })?;
                let d = req.duration.unwrap_or(song.duration);
                Ok(engine.spot_from_song(&req.name, &song, clip(d))?)
            }
            _ => Err(ApiError::invalid("give exactly one of onsets or reference_midi")),
        }
    })
    .await?;
    let p = s.publish(p);
    Ok(view(&p, Vec::new(), StatusCode::CREATED))
}

async fn get_project(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let p = s.project(&id).await?;
    Ok(view(&p, Vec::new(), StatusCode::OK))
}

/// Applies a synchronous edit under the project's write lock.
async fn edit(
    s: Arc<AppState>,
    id: String,
    headers: HeaderMap,
    f: impl FnOnce(&Engine, &mut Project) -> Result<Vec<Diagnostic>, ApiError> + Send + 'static,
) -> Result<Response, ApiError> {
    let expected = precondition(&headers)?;
    let lock = s.lock_for(&id);
    let _guard = lock.lock().await;
    let current = s.project(&id).await?;
    check_revision(&current, expected)?;
    let mut p = (*current).clone();
    let engine = s.engine.clone();
    let (p, warnings) = blocking(move || {
        let warnings = f(&engine, &mut p)?;
        engine.commit(&p, Outputs::default())?;
        Ok((p, warnings))
    })
    .await?;
    let p = s.publish(p);
    Ok(view(&p, warnings, StatusCode::OK))
}

#[derive(Deserialize)]
struct SpotsRequest {
    onsets: Vec<f64>,
}

async fn put_spots(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(req): Json<SpotsRequest>,
) -> Result<Response, ApiError> {
    edit(s, id, headers, move |engine, p| {
        p.set_spots(req.onsets, engine.config.spotting.merge_window)?;
        Ok(Vec::new())
    })
    .await
}

#[derive(Deserialize)]
struct DescriptionRequest {
    /// Replaces the prompt text directly.
    description: Option<String>,
    /// Re-describes the clip from labels; motion fields are kept as sent.
    report: Option<VisualReport>,
    hints: Option<String>,
}

async fn put_description(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(req): Json<DescriptionRequest>,
) -> Result<Response, ApiError> {
    if req.description.is_none() && req.report.is_none() {
        return Err(ApiError::invalid("give a description, a report, or both"));
    }
    edit(s, id, headers, move |engine, p| {
        if let Some(report) = req.report {
            engine.describe(p, report, None, None, req.hints)?;
        }
        if let Some(text) = req.description {
            p.set_description(text)?;
        }
        Ok(Vec::new())
    })
    .await
}

#[derive(Deserialize)]
struct AbcRequest {
    abc: String,
}

async fn put_abc(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(req): Json<AbcRequest>,
) -> Result<Response, ApiError> {
    edit(s, id, headers, move |_, p| {
        p.set_abc(req.abc)?;
        Ok(Vec::new())
    })
    .await
}

/// The body is the scheme document itself.
async fn put_scheme(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: String,
) -> Result<Response, ApiError> {
    edit(s, id, headers, move |engine, p| Ok(p.set_scheme(&body, &engine.registry)?)).await
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Generate,
    Assess,
    Arrange,
    Render,
}

impl Action {
    fn needs(self) -> (&'static str, Stage) {
        match self {
            Action::Generate => ("generate", Stage::Described),
            Action::Assess => ("assess", Stage::Generated),
            Action::Arrange => ("arrange", Stage::Assessed),
            Action::Render => ("render", Stage::Arranged),
        }
    }

    fn run(self, engine: &Engine, p: &mut Project) -> Result<Outputs, PipelineError> {
        match self {
            Action::Generate => engine.generate(p),
            Action::Assess => engine.assess(p),
            Action::Arrange => engine.arrange(p),
            Action::Render => engine.render(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Job {
    pub id: String,
    pub project: String,
    pub action: Action,
    pub status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Project revision after the job finished.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub revision: Option<u64>,
}

#[derive(Deserialize, Default)]
struct RunQuery {
    #[serde(default)]
    wait: bool,
}

async fn start(s: Arc<AppState>, id: String, headers: HeaderMap, wait: bool, action: Action) -> Result<Response, ApiError> {
    let expected = precondition(&headers)?;
    // cheap checks up front so obvious mistakes are not queued
    let current = s.project(&id).await?;
    check_revision(&current, expected)?;
    let (name, needed) = action.needs();
    current.require(name, needed).map_err(PipelineError::from)?;

    let job_id = format!("j{}", s.next_job.fetch_add(1, Ordering::Relaxed));
    let mut job = Job {
        id: job_id.clone(),
        project: id.clone(),
        action,
        status: JobStatus::Queued,
        error: None,
        revision: None,
    };
    s.set_job(job.clone());

    let state = s.clone();
    let task = tokio::spawn(async move {
        let lock = state.lock_for(&id);
        let _guard = lock.lock().await;
        let result = async {
            let current = state.project(&id).await?;
            check_revision(&current, expected)?;
            let mut running = job.clone();
            running.status = JobStatus::Running;
            state.set_job(running);
            let mut p = (*current).clone();
            let engine = state.engine.clone();
            let p = blocking(move || {
                let out = action.run(&engine, &mut p)?;
                engine.commit(&p, out)?;
                Ok(p)
            })
            .await?;
            Ok::<_, ApiError>(state.publish(p))
        }
        .await;
        match &result {
            Ok(p) => {
                job.status = JobStatus::Succeeded;
                job.revision = Some(p.revision);
            }
            Err(e) => {
                job.status = JobStatus::Failed;
                job.error = Some(e.message.clone());
            }
        }
        state.set_job(job);
        result
    });

    if wait {
        let p = task
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
        let mut r = view(&p, Vec::new(), StatusCode::OK);
        if let Ok(v) = HeaderValue::from_str(&job_id) {
            r.headers_mut().insert("x-job-id", v);
        }
        return Ok(r);
    }
    let mut r = (StatusCode::ACCEPTED, Json(json!({"job": job_id, "status": JobStatus::Queued}))).into_response();
    if let Ok(v) = HeaderValue::from_str(&format!("/jobs/{job_id}")) {
        r.headers_mut().insert(header::LOCATION, v);
    }
    Ok(r)
}

macro_rules! stage_handler {
    ($name:ident, $action:expr) => {
        async fn $name(
            State(s): State<Arc<AppState>>,
            Path(id): Path<String>,
            Query(q): Query<RunQuery>,
            headers: HeaderMap,
        ) -> Result<Response, ApiError> {
            start(s, id, headers, q.wait, $action).await
        }
    };
}

stage_handler!(run_generate, Action::Generate);
stage_handler!(run_assess, Action::Assess);
stage_handler!(run_arrange, Action::Arrange);
stage_handler!(run_render, Action::Render);

async fn get_job(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let job = s.jobs.read().unwrap_or_else(|e| e.into_inner()).get(&id).cloned();
    match job {
        Some(j) => Ok(Json(j).into_response()),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no job with id {id}"))),
    }
}

async fn latest_render(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let p = s.project(&id).await?;
    let Some(r) = p.renders.last() else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", "the project has no render yet"));
    };
    let path = s.engine.store.render_path(&p.id, r);
    let bytes = blocking(move || {
        std::fs::read(&path)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", format!("{}: {e}", path.display())))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

async fn transcripts(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let p = s.project(&id).await?;
    let turns = |t: &Option<cuekit_core::agents::ChatTranscript>| json!(t.as_ref().map(|t| t.turns.clone()).unwrap_or_default());
    Ok(Json(json!({
        "assessment": turns(&p.assessment_log),
        "arrangement": turns(&p.arrangement_log),
    }))
    .into_response())
}
