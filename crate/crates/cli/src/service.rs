//! HTTP service mode: one campaign per process, a wall-clock selector loop in
//! a background thread, and JSON endpoints for the live integration points.
//!
//! Endpoints (all under `/v1`):
//!
//! - `GET  /v1/selection` — active arm, per-decision ε, probability vector.
//! - `POST /v1/events` — batch ingestion; returns accepted/rejected counts.
//! - `GET  /v1/stats` — per-arm KPI snapshots as of the last refresh, plus
//!   the ε in force at that refresh.
//! - `POST /v1/runs` — start (or resume) a run; 409 while one is active.
//! - `GET  /v1/runs/{id}` — run status; 404 for unknown ids.
//! - `POST /v1/runs/{id}/stop` — stop the active run.
//!
//! Stats derive from the persisted log: every accepted event is appended to
//! the run's event log before it can influence a snapshot, and KPI refreshes
//! are pure functions of (events before the refresh tick, decisions,
//! schedule). Restarting the service and resuming the run replays the logs
//! into exactly the same `/v1/stats`. To keep that true, ingestion rejects
//! events stamped earlier than the last refresh or the last persisted event,
//! and events stamped more than [`MAX_FUTURE_SKEW_SECS`] into the future.
//!
//! Handlers never mutate selector state; the loop thread owns it and
//! publishes through the shared lock.

use crate::config::Resolved;
use armsel_core::arm::ArmId;
use armsel_core::kpi::{ArmKpiSnapshot, Event, KpiSpec};
use armsel_core::policy::{PolicyConfig, ProbabilityEntry};
use armsel_core::selector::{LoopParams, ScheduleConfig, SelectorLoop, Strategy, unix_now};
use armsel_core::store::{self, EventStore};
use axum::Router;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

/// Ingested events may run at most this far ahead of the service clock.
pub const MAX_FUTURE_SKEW_SECS: i64 = 60;

pub type Shared = Arc<Mutex<ServiceState>>;

pub struct ServiceState {
    pub defaults: ServiceDefaults,
    pub run: Option<ActiveRun>,
}

/// Per-process defaults for runs started over HTTP, from the serve config.
#[derive(Debug, Clone)]
pub struct ServiceDefaults {
    pub out_dir: PathBuf,
    pub arms: Vec<String>,
    pub policy: PolicyConfig,
    pub swap_secs: u64,
    pub refresh_secs: u64,
    pub kpi: KpiSpec,
    pub seed: u64,
    pub run_duration_secs: u64,
}

impl ServiceDefaults {
    pub fn from_resolved(resolved: &Resolved) -> Self {
        ServiceDefaults {
            out_dir: resolved.out.clone(),
            arms: resolved.serve.arms.clone(),
            policy: resolved.policy.clone(),
            swap_secs: resolved.swap_secs,
            refresh_secs: resolved.refresh_secs,
            kpi: resolved.kpi,
            seed: resolved.seed,
            run_duration_secs: (resolved.serve.run_duration_days * 86_400.0).round() as u64,
        }
    }
}

pub struct ActiveRun {
    pub run_id: String,
    pub started_at: i64,
    pub loop_: SelectorLoop,
    pub store: EventStore,
    pub stopping: bool,
    pub finished: bool,
    pub error: Option<String>,
    /// Bumped on every replacement so a stale ticker thread can tell it is
    /// no longer driving this slot.
    pub epoch: u64,
}

pub fn shared_state(defaults: ServiceDefaults) -> Shared {
    Arc::new(Mutex::new(ServiceState {
        defaults,
        run: None,
    }))
}

pub fn app(shared: Shared) -> Router {
    Router::new()
        .route("/v1/selection", get(get_selection))
        .route("/v1/events", post(post_events))
        .route("/v1/stats", get(get_stats))
        .route("/v1/runs", post(post_runs))
        .route("/v1/runs/{id}", get(get_run))
        .route("/v1/runs/{id}/stop", post(post_stop))
        .with_state(shared)
}

pub async fn serve(defaults: ServiceDefaults, host: &str, port: u16) -> anyhow::Result<()> {
    let shared = shared_state(defaults);
    let addr = format!("{host}:{port}");
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    eprintln!("listening on http://{addr}");
    axum::serve(listener, app(shared)).await?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Error plumbing
// ---------------------------------------------------------------------------

struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(json!({ "error": self.message }))).into_response()
    }
}

fn lock(shared: &Shared) -> std::sync::MutexGuard<'_, ServiceState> {
    shared.lock().expect("service lock poisoned")
}

// ---------------------------------------------------------------------------
// GET /v1/selection
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct SelectionResponse {
    run_id: String,
    current_arm: ArmId,
    epsilon: f64,
    decision_timestamp: i64,
    decisions: u64,
    finished: bool,
    probabilities: Vec<ProbabilityEntry>,
}

async fn get_selection(State(shared): State<Shared>) -> Result<Response, ApiError> {
    let state = lock(&shared);
    let run = state
        .run
        .as_ref()
        .ok_or_else(|| ApiError::not_found("no active run"))?;
    let st = run.loop_.state();
    let last = st
        .decisions
        .last()
        .expect("loop always has the initial decision");
    let body = SelectionResponse {
        run_id: run.run_id.clone(),
        current_arm: st.current_arm.clone(),
        epsilon: last.epsilon_used,
        decision_timestamp: last.timestamp,
        decisions: st.decisions.len() as u64,
        finished: run.finished,
        probabilities: last.probabilities.entries().to_vec(),
    };
    Ok(axum::Json(body).into_response())
}

// ---------------------------------------------------------------------------
// GET /v1/stats
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct StatsResponse {
    run_id: String,
    /// Timestamp of the refresh these snapshots were computed at; null until
    /// the first refresh.
    computed_at: Option<i64>,
    /// ε in force at that refresh.
    epsilon: f64,
    refreshes: u64,
    arms: Vec<ArmKpiSnapshot>,
}

async fn get_stats(State(shared): State<Shared>) -> Result<Response, ApiError> {
    let state = lock(&shared);
    let run = state
        .run
        .as_ref()
        .ok_or_else(|| ApiError::not_found("no active run"))?;
    let st = run.loop_.state();
    let body = StatsResponse {
        run_id: run.run_id.clone(),
        computed_at: st.last_refresh_at,
        epsilon: st.last_refresh_epsilon,
        refreshes: st.refresh_count,
        arms: st.snapshots.clone(),
    };
    Ok(axum::Json(body).into_response())
}

// ---------------------------------------------------------------------------
// POST /v1/events
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct EventsBody {
    events: Vec<Event>,
}

#[derive(Debug, Serialize)]
struct IngestResponse {
    accepted: u64,
    rejected: u64,
}

async fn post_events(
    State(shared): State<Shared>,
    payload: Result<axum::Json<EventsBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let axum::Json(body) = payload.map_err(|e| ApiError::bad_request(e.body_text()))?;
    for (i, e) in body.events.iter().enumerate() {
        if let Err(err) = e.validate() {
            return Err(ApiError::bad_request(format!("events[{i}]: {err}")));
        }
    }

    let mut state = lock(&shared);
    let run = state
        .run
        .as_mut()
        .ok_or_else(|| ApiError::not_found("no active run"))?;
    if run.finished {
        return Err(ApiError::conflict(format!(
            "run `{}` has finished",
            run.run_id
        )));
    }

    // Events older than the last KPI refresh would make replayed stats
    // diverge from what the live refresh saw; events older than the last
    // persisted one would break the log's ordering.
    let mut floor = run.loop_.state().last_refresh_at.unwrap_or(i64::MIN);
    if let Some(ts) = run.store.last_event_ts() {
        floor = floor.max(ts);
    }
    let ceiling = unix_now() + MAX_FUTURE_SKEW_SECS;

    let mut batch: Vec<Event> = body.events;
    batch.sort_by_key(|e| e.timestamp);
    let mut accepted = Vec::with_capacity(batch.len());
    let mut rejected = 0u64;
    for e in batch {
        if e.timestamp < floor || e.timestamp > ceiling {
            rejected += 1;
            continue;
        }
        accepted.push(e);
    }
    for e in &accepted {
        run.store
            .append_event(e)
            .map_err(|err| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, err.to_string()))?;
    }
    run.store
        .flush()
        .map_err(|err| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, err.to_string()))?;
    let count = accepted.len() as u64;
    run.loop_
        .ingest(accepted)
        .map_err(|err| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, err.to_string()))?;

    Ok(axum::Json(IngestResponse {
        accepted: count,
        rejected,
    })
    .into_response())
}

// ---------------------------------------------------------------------------
// POST /v1/runs
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StartRunBody {
    run_id: String,
    #[serde(default)]
    resume: bool,
    arms: Option<Vec<String>>,
    seed: Option<u64>,
    policy: Option<PolicyConfig>,
    swap_secs: Option<u64>,
    kpi_refresh_secs: Option<u64>,
    run_duration_secs: Option<u64>,
    kpi: Option<KpiSpec>,
}

#[derive(Debug, Serialize)]
struct StartRunResponse {
    run_id: String,
    started_at: i64,
    resumed: bool,
    arms: Vec<ArmId>,
}

async fn post_runs(
    State(shared): State<Shared>,
    payload: Result<axum::Json<StartRunBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let axum::Json(body) = payload.map_err(|e| ApiError::bad_request(e.body_text()))?;

    let mut state = lock(&shared);
    if let Some(run) = &state.run
        && !run.finished
    {
        return Err(ApiError::conflict(format!(
            "run `{}` is already active; stop it first",
            run.run_id
        )));
    }

    let defaults = state.defaults.clone();
    let arm_names = body.arms.unwrap_or_else(|| defaults.arms.clone());
    if arm_names.is_empty() {
        return Err(ApiError::bad_request(
            "no arms: provide `arms` in the request or in the serve config",
        ));
    }
    let mut arms = Vec::with_capacity(arm_names.len());
    for name in &arm_names {
        arms.push(ArmId::new(name.clone()).map_err(|e| ApiError::bad_request(e.to_string()))?);
    }

    let schedule = ScheduleConfig {
        swap_interval_secs: body.swap_secs.unwrap_or(defaults.swap_secs),
        kpi_refresh_secs: body.kpi_refresh_secs.unwrap_or(defaults.refresh_secs),
        run_duration_secs: body.run_duration_secs.unwrap_or(defaults.run_duration_secs),
    };
    let params = LoopParams {
        arms,
        strategy: Strategy::Bandit(body.policy.unwrap_or_else(|| defaults.policy.clone())),
        schedule,
        kpi: body.kpi.unwrap_or(defaults.kpi),
        seed: body.seed.unwrap_or(defaults.seed),
        start_time: unix_now(),
    };

    let (loop_, store) = if body.resume {
        let logs = store::load_run(&defaults.out_dir, &body.run_id)
            .map_err(|e| ApiError::bad_request(format!("cannot resume: {e}")))?;
        let last_event_ts = logs.events.last().map(|e| e.timestamp);
        let last_decision_ts = logs.decisions.last().map(|d| d.timestamp);
        let loop_ = SelectorLoop::rebuild(params, logs.events, logs.decisions)
            .map_err(|e| ApiError::bad_request(format!("cannot resume: {e}")))?;
        let store = EventStore::resume(
            &defaults.out_dir,
            &body.run_id,
            last_event_ts,
            last_decision_ts,
        )
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        (loop_, store)
    } else {
        let loop_ = SelectorLoop::new(params).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let mut store = EventStore::create(&defaults.out_dir, &body.run_id)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let initial = loop_.state().decisions.last().expect("initial decision");
        store
            .append_decision(initial)
            .and_then(|_| store.flush())
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        (loop_, store)
    };

    let epoch = state.run.as_ref().map_or(0, |r| r.epoch + 1);
    let started_at = loop_.state().start_time;
    let response = StartRunResponse {
        run_id: body.run_id.clone(),
        started_at,
        resumed: body.resume,
        arms: loop_.arms().to_vec(),
    };
    state.run = Some(ActiveRun {
        run_id: body.run_id,
        started_at,
        loop_,
        store,
        stopping: false,
        finished: false,
        error: None,
        epoch,
    });
    drop(state);

    spawn_ticker(shared.clone(), epoch);
    Ok((StatusCode::CREATED, axum::Json(response)).into_response())
}

// ---------------------------------------------------------------------------
// GET /v1/runs/{id}, POST /v1/runs/{id}/stop
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct RunStatus {
    run_id: String,
    started_at: i64,
    finished: bool,
    decisions: u64,
    refreshes: u64,
    current_arm: ArmId,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

async fn get_run(
    State(shared): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let state = lock(&shared);
    let run = state
        .run
        .as_ref()
        .filter(|r| r.run_id == id)
        .ok_or_else(|| ApiError::not_found(format!("unknown run `{id}`")))?;
    let st = run.loop_.state();
    let body = RunStatus {
        run_id: run.run_id.clone(),
        started_at: run.started_at,
        finished: run.finished,
        decisions: st.decisions.len() as u64,
        refreshes: st.refresh_count,
        current_arm: st.current_arm.clone(),
        error: run.error.clone(),
    };
    Ok(axum::Json(body).into_response())
}

async fn post_stop(
    State(shared): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let mut state = lock(&shared);
    let run = state
        .run
        .as_mut()
        .filter(|r| r.run_id == id)
        .ok_or_else(|| ApiError::not_found(format!("unknown run `{id}`")))?;
    run.stopping = true;
    run.finished = true;
    Ok(axum::Json(json!({ "run_id": id, "stopped": true })).into_response())
}

// ---------------------------------------------------------------------------
// The wall-clock loop thread
// ---------------------------------------------------------------------------

/// Drives swap ticks for the run identified by `epoch`. Missed boundaries
/// (service restart, long stalls) are skipped, never replayed: the next tick
/// always lands on the first boundary after wall-now.
fn spawn_ticker(shared: Shared, epoch: u64) {
    std::thread::spawn(move || {
        loop {
            let (target, end) = {
                let state = lock(&shared);
                let Some(run) = state.run.as_ref().filter(|r| r.epoch == epoch) else {
                    return;
                };
                if run.stopping || run.finished {
                    return;
                }
                let st = run.loop_.state();
                let swap = run.loop_.schedule().swap_interval_secs as i64;
                let anchor = st.now.max(unix_now());
                let k = (anchor - st.start_time) / swap + 1;
                (st.start_time + k * swap, run.loop_.end_time())
            };
            if target > end {
                let mut state = lock(&shared);
                if let Some(run) = state.run.as_mut().filter(|r| r.epoch == epoch) {
                    run.finished = true;
                }
                return;
            }

            while unix_now() < target {
                std::thread::sleep(std::time::Duration::from_millis(50));
                let state = lock(&shared);
                match state.run.as_ref().filter(|r| r.epoch == epoch) {
                    Some(run) if !run.stopping && !run.finished => {}
                    _ => return,
                }
            }

            let mut state = lock(&shared);
            let Some(run) = state.run.as_mut().filter(|r| r.epoch == epoch) else {
                return;
            };
            if run.stopping || run.finished {
                return;
            }
            let now = unix_now().max(target);
            let result = run
                .loop_
                .tick_at(now)
                .map_err(|e| e.to_string())
                .and_then(|outcome| {
                    run.store
                        .append_decision(&outcome.decision)
                        .and_then(|_| run.store.flush())
                        .map_err(|e| e.to_string())
                });
            if let Err(message) = result {
                eprintln!("run `{}` stopped: {message}", run.run_id);
                run.error = Some(message);
                run.finished = true;
                return;
            }
            if run.loop_.finished() {
                run.finished = true;
                return;
            }
        }
    });
}
