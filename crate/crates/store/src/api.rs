//! HTTP interface used by the labeling client.

use crate::store::{DataStore, StoreError};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use planit_core::affordance::ModelParameters;
use planit_core::costmap::{rasterize, CostMap, CostMapError, DEFAULT_RESOLUTION};
use planit_core::em::{self, EMConfig};
use planit_core::geometry::{Bounds, Vec2};
use planit_core::io;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};

pub const GRID_CONTENT_TYPE: &str = "application/octet-stream";
pub const NDJSON_CONTENT_TYPE: &str = "application/x-ndjson";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Average log-likelihood per waypoint at initialization and at the end,
    /// for the kept restart.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_avg_log_likelihood: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_avg_log_likelihood: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u32>,
}

pub struct AppState {
    store: RwLock<DataStore>,
    model: RwLock<Option<ModelParameters>>,
    jobs: Mutex<BTreeMap<u64, Job>>,
    train_config: EMConfig,
}

impl AppState {
    pub fn new(store: DataStore, train_config: EMConfig) -> Result<Arc<Self>, StoreError> {
        let model = store.load_model()?;
        Ok(Arc::new(AppState {
            store: RwLock::new(store),
            model: RwLock::new(model),
            jobs: Mutex::new(BTreeMap::new()),
            train_config,
        }))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/environments", get(list_environments))
        .route("/environments/{id}", get(get_environment))
        .route("/trajectories", get(list_trajectories))
        .route("/trajectories/{id}", get(get_trajectory))
        .route("/labels", get(get_labels).post(post_label))
        .route("/heatmap", get(get_heatmap))
        .route("/train", post(post_train))
        .route("/jobs/{id}", get(get_job))
        .route("/model", get(get_model))
        .with_state(state)
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<usize>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { error: msg.into(), field: None, line: None } }
    }

    fn not_found(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, msg)
    }

    fn bad_request(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, msg)
    }

    fn schema(e: io::SchemaError) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: e.message.clone(),
                field: (!e.field.is_empty()).then(|| e.field.clone()),
                line: (e.line > 0).then_some(e.line),
            },
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Schema { error, .. } => ApiError::schema(error),
            StoreError::DanglingReference { .. } => ApiError::not_found(e.to_string()),
            StoreError::Duplicate { .. } => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            StoreError::Io { .. } => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, json_bytes(&self.body)).into_response()
    }
}

/// JSON body with a stable byte layout.
fn json_bytes<T: Serialize>(value: &T) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], serde_json::to_vec(value).expect("serializable")).into_response()
}

#[derive(Debug, Serialize)]
struct EnvironmentSummary<'a> {
    id: &'a str,
    bounds: Bounds,
    activities: usize,
    trajectories: usize,
}

async fn list_environments(State(s): State<Arc<AppState>>) -> Response {
    let store = s.store.read().unwrap();
    let out: Vec<EnvironmentSummary> = store
        .environments
        .values()
        .map(|e| EnvironmentSummary {
            id: &e.id,
            bounds: e.bounds,
            activities: e.activities.len(),
            trajectories: store.trajectories.values().filter(|t| t.environment_id == e.id).count(),
        })
        .collect();
    json_bytes(&out)
}

async fn get_environment(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let store = s.store.read().unwrap();
    let env = store.environments.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown environment `{id}`")))?;
    Ok(json_bytes(env))
}

#[derive(Debug, Deserialize)]
struct TrajectoryQuery {
    env: Option<String>,
}

#[derive(Debug, Serialize)]
struct TrajectorySummary<'a> {
    id: &'a str,
    environment_id: &'a str,
    start_time: f64,
    end_time: f64,
    waypoints: usize,
}

async fn list_trajectories(State(s): State<Arc<AppState>>, Query(q): Query<TrajectoryQuery>) -> Result<Response, ApiError> {
    let store = s.store.read().unwrap();
    if let Some(env) = &q.env {
        if !store.environments.contains_key(env) {
            return Err(ApiError::not_found(format!("unknown environment `{env}`")));
        }
    }
    let out: Vec<TrajectorySummary> = store
        .trajectories
        .values()
        .filter(|t| q.env.as_ref().is_none_or(|e| *e == t.environment_id))
        .map(|t| TrajectorySummary {
            id: &t.id,
            environment_id: &t.environment_id,
            start_time: t.start_time(),
            end_time: t.end_time(),
            waypoints: t.waypoints.len(),
        })
        .collect();
    Ok(json_bytes(&out))
}

async fn get_trajectory(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let store = s.store.read().unwrap();
    let t = store.trajectories.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown trajectory `{id}`")))?;
    Ok(json_bytes(t))
}

#[derive(Debug, Deserialize)]
struct LabelQuery {
    trajectory: Option<String>,
}

async fn get_labels(State(s): State<Arc<AppState>>, Query(q): Query<LabelQuery>) -> Response {
    let store = s.store.read().unwrap();
    let body: String = match &q.trajectory {
        None => store.labels_text(),
        Some(t) => store
            .labels
            .iter()
            .filter(|l| l.trajectory_id == *t)
            .map(|l| io::label_record_line(l) + "\n")
            .collect(),
    };
    ([(header::CONTENT_TYPE, NDJSON_CONTENT_TYPE)], body).into_response()
}

async fn post_label(State(s): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let label = io::parse_label_record(text).map_err(ApiError::schema)?;
    s.store.write().unwrap().append_label(label.clone())?;
    let mut resp = json_bytes(&label);
    *resp.status_mut() = StatusCode::CREATED;
    Ok(resp)
}

#[derive(Debug, Deserialize)]
struct HeatmapQuery {
    env: String,
    res: Option<f64>,
    format: Option<String>,
}

/// JSON rendering of a cost map; `values[row][col]`, row 0 at the minimum y.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct HeatmapJson {
    pub origin: Vec2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub values: Vec<Vec<f64>>,
    pub obstacles: Vec<Vec<bool>>,
}

impl From<&CostMap> for HeatmapJson {
    fn from(m: &CostMap) -> Self {
        HeatmapJson {
            origin: m.origin,
            resolution: m.resolution,
            width: m.width,
            height: m.height,
            values: m.values.chunks(m.width).map(<[f64]>::to_vec).collect(),
            obstacles: m.obstacles.chunks(m.width).map(<[bool]>::to_vec).collect(),
        }
    }
}

async fn get_heatmap(State(s): State<Arc<AppState>>, Query(q): Query<HeatmapQuery>) -> Result<Response, ApiError> {
    let binary = match q.format.as_deref() {
        None | Some("json") => false,
        Some("grid") => true,
        Some(other) => return Err(ApiError::bad_request(format!("unknown format `{other}`; use json or grid"))),
    };
    let env = s
        .store
        .read()
        .unwrap()
        .environments
        .get(&q.env)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown environment `{}`", q.env)))?;
    let model = s.model.read().unwrap().clone().ok_or_else(|| ApiError::not_found("no model has been trained"))?;
    let res = q.res.unwrap_or(DEFAULT_RESOLUTION);
    let map = tokio::task::spawn_blocking(move || rasterize(&env, &model, res))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| match e {
            CostMapError::Cost(c) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, c.to_string()),
            other => ApiError::bad_request(other.to_string()),
        })?;
    Ok(if binary {
        ([(header::CONTENT_TYPE, GRID_CONTENT_TYPE)], map.encode()).into_response()
    } else {
        json_bytes(&HeatmapJson::from(&map))
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainAccepted {
    pub job_id: String,
}

async fn post_train(State(s): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let id = {
        let mut jobs = s.jobs.lock().unwrap();
        if jobs.values().any(|j| j.status == JobStatus::Running) {
            return Err(ApiError::new(StatusCode::CONFLICT, "a training job is already running"));
        }
        let n = jobs.keys().next_back().map_or(1, |k| k + 1);
        jobs.insert(
            n,
            Job {
                id: n.to_string(),
                status: JobStatus::Running,
                error: None,
                initial_avg_log_likelihood: None,
                final_avg_log_likelihood: None,
                iterations: None,
            },
        );
        n
    };
    let state = Arc::clone(&s);
    tokio::task::spawn_blocking(move || {
        let result = train(&state);
        let mut jobs = state.jobs.lock().unwrap();
        let job = jobs.get_mut(&id).expect("job registered");
        match result {
            Ok((init, fin, iters)) => {
                job.status = JobStatus::Succeeded;
                job.initial_avg_log_likelihood = Some(init);
                job.final_avg_log_likelihood = Some(fin);
                job.iterations = Some(iters);
            }
            Err(e) => {
                job.status = JobStatus::Failed;
                job.error = Some(e);
            }
        }
    });
    let mut resp = json_bytes(&TrainAccepted { job_id: id.to_string() });
    *resp.status_mut() = StatusCode::ACCEPTED;
    Ok(resp)
}

fn train(state: &AppState) -> Result<(f64, f64, u32), String> {
    let (set, store) = {
        let store = state.store.read().unwrap();
        (store.training_set().map_err(|e| e.to_string())?, store.clone())
    };
    let (params, trace) = em::fit(&set, &state.train_config).map_err(|e| e.to_string())?;
    store.save_model(&params).map_err(|e| e.to_string())?;
    let iters = params.iteration_count;
    *state.model.write().unwrap() = Some(params);
    Ok((trace.avg_log_likelihood[0], trace.final_avg_log_likelihood(), iters))
}

async fn get_job(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let jobs = s.jobs.lock().unwrap();
    let job = id
        .parse::<u64>()
        .ok()
        .and_then(|n| jobs.get(&n))
        .ok_or_else(|| ApiError::not_found(format!("unknown job `{id}`")))?;
    Ok(json_bytes(job))
}

async fn get_model(State(s): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let model = s.model.read().unwrap();
    let m = model.as_ref().ok_or_else(|| ApiError::not_found("no model has been trained"))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], io::model_to_string(m)).into_response())
}

/// Binds and serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
