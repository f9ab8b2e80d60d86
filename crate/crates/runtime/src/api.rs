//! Operator HTTP API over one twin session, plus a server-sent-event stream
//! of paired samples.
//!
//! | route | |
//! |---|---|
//! | `GET /status` | session snapshot and running divergence |
//! | `GET /trace?since=<t>` | paired samples with plant time `>= t` |
//! | `POST /setpoint {value}` | forwarded to the plant |
//! | `POST /match {generations?, seed?}` | fit twin params to the recorded trace, then swap them in |
//! | `POST /offline {profile, duration, params?}` | what-if run of the twin |
//! | `POST /stop` | stop the session, return the final report |
//! | `GET /stream` | `pair`, `event` and `match` events |

use std::convert::Infallible;
use std::future::IntoFuture;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thermotwin_core::controller::SetpointProfile;
use thermotwin_core::matching::{evaluate_params, ga_optimize_observed};
use thermotwin_core::{GaConfig, GaResult, ParamBounds, PeltierParams, RunLog, Scenario};
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;

use crate::session::{PairedSample, SessionSnapshot, StreamEvent, TwinSession};
use crate::RuntimeError;

#[derive(Clone)]
pub struct ApiContext {
    pub session: TwinSession,
    /// Base scenario for offline runs.
    pub offline_template: Scenario,
    pub bounds: ParamBounds,
    pub ga: GaConfig,
    matching: Arc<AtomicBool>,
    closing: CancellationToken,
}

impl ApiContext {
    pub fn new(session: TwinSession, offline_template: Scenario, bounds: ParamBounds, ga: GaConfig) -> Self {
        Self {
            session,
            offline_template,
            bounds,
            ga,
            matching: Arc::new(AtomicBool::new(false)),
            closing: CancellationToken::new(),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    msg: String,
}

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            msg: msg.into(),
        }
    }

    fn conflict(msg: impl Into<String>) -> Self {
        Self {
            status: StatusCode::CONFLICT,
            msg: msg.into(),
        }
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        let status = match e {
            RuntimeError::BadRequest(_) | RuntimeError::Sim(_) => StatusCode::BAD_REQUEST,
            RuntimeError::NotLive | RuntimeError::NoSamples => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            msg: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.msg }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let raw: &[u8] = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        body
    };
    serde_json::from_slice(raw).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

pub fn router(ctx: ApiContext) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/trace", get(trace))
        .route("/setpoint", post(setpoint))
        .route("/match", post(start_match))
        .route("/offline", post(offline))
        .route("/stop", post(stop))
        .route("/stream", get(stream))
        .with_state(ctx)
}

#[derive(Serialize)]
struct StatusBody {
    #[serde(flatten)]
    session: SessionSnapshot,
    match_running: bool,
}

async fn status(State(ctx): State<ApiContext>) -> Json<StatusBody> {
    Json(StatusBody {
        session: ctx.session.snapshot(),
        match_running: ctx.matching.load(Ordering::SeqCst),
    })
}

#[derive(Deserialize)]
struct TraceQuery {
    since: Option<f64>,
}

async fn trace(
    State(ctx): State<ApiContext>,
    q: Result<Query<TraceQuery>, QueryRejection>,
) -> ApiResult<Vec<PairedSample>> {
    let Query(q) = q.map_err(|e| ApiError::bad_request(e.body_text()))?;
    Ok(Json(ctx.session.trace_since(q.since.unwrap_or(f64::NEG_INFINITY))))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetpointBody {
    value: f64,
}

async fn setpoint(State(ctx): State<ApiContext>, body: Bytes) -> ApiResult<serde_json::Value> {
    let b: SetpointBody = parse_body(&body)?;
    ctx.session.send_setpoint(b.value)?;
    Ok(Json(json!({ "accepted": b.value })))
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct MatchBody {
    generations: Option<usize>,
    seed: Option<u64>,
}

#[derive(Serialize)]
struct MatchResponse {
    #[serde(flatten)]
    result: GaResult,
    previous: PeltierParams,
    initial_cost: f64,
}

struct MatchGuard(Arc<AtomicBool>);

impl Drop for MatchGuard {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

async fn start_match(State(ctx): State<ApiContext>, body: Bytes) -> ApiResult<MatchResponse> {
    let b: MatchBody = parse_body(&body)?;
    let mut cfg = ctx.ga.clone();
    if let Some(g) = b.generations {
        cfg.generations = g;
    }
    if let Some(s) = b.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    if ctx.matching.swap(true, Ordering::SeqCst) {
        return Err(ApiError::conflict("a match is already running"));
    }
    let _guard = MatchGuard(ctx.matching.clone());

    let reference = ctx.session.plant_log();
    if reference.len() < 2 {
        return Err(ApiError::conflict(format!(
            "need at least 2 recorded samples to match, have {}",
            reference.len()
        )));
    }
    let model = ctx.session.model();
    let bounds = ctx.bounds;
    let session = ctx.session.clone();
    info!("matching over {} samples, {} generations", reference.len(), cfg.generations);
    let (result, initial_cost) = tokio::task::spawn_blocking(move || {
        let initial_cost = evaluate_params(&reference, &model, model.params, cfg.weights);
        let result = ga_optimize_observed(&reference, &bounds, &cfg, &model, Some(model.params), |rep| {
            session.publish(StreamEvent::MatchProgress {
                generation: rep.generation,
                best_cost: rep.best_cost,
            })
        });
        result.map(|r| (r, initial_cost))
    })
    .await
    .map_err(|e| ApiError::from(RuntimeError::Task(e.to_string())))?
    .map_err(|e| ApiError::bad_request(e.to_string()))?;

    ctx.session.swap_params(result.best);
    Ok(Json(MatchResponse {
        result,
        previous: model.params,
        initial_cost,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OfflineBody {
    profile: SetpointProfile,
    duration: f64,
    #[serde(default)]
    params: Option<PeltierParams>,
}

async fn offline(State(ctx): State<ApiContext>, body: Bytes) -> ApiResult<RunLog> {
    let b: OfflineBody = parse_body(&body)?;
    let params = b.params.unwrap_or_else(|| ctx.session.model().params);
    let template = ctx.offline_template.clone();
    let run = tokio::task::spawn_blocking(move || crate::run_offline(&template, b.profile, params, b.duration))
        .await
        .map_err(|e| ApiError::from(RuntimeError::Task(e.to_string())))?
        .map_err(RuntimeError::from)?;
    Ok(Json(run))
}

async fn stop(State(ctx): State<ApiContext>) -> ApiResult<serde_json::Value> {
    let report = ctx.session.stop().await?;
    Ok(Json(json!({ "status": ctx.session.status(), "report": report })))
}

async fn stream(State(ctx): State<ApiContext>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = ctx.session.subscribe();
    let events = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            let ev = match rx.recv().await {
                Ok(ev) => Event::default().event(ev.name()).json_data(&ev),
                Err(RecvError::Lagged(n)) => {
                    warn!("stream client lagged, {n} events skipped");
                    Event::default().event("lagged").json_data(json!({ "skipped": n }))
                }
                Err(RecvError::Closed) => return None,
            };
            match ev {
                Ok(ev) => return Some((Ok(ev), rx)),
                Err(e) => warn!("cannot encode stream event: {e}"),
            }
        }
    })
    .take_until(ctx.closing.clone().cancelled_owned());
    Sse::new(events).keep_alive(KeepAlive::default())
}

/// A running API server.
pub struct ApiServer {
    addr: SocketAddr,
    closing: CancellationToken,
    task: JoinHandle<std::io::Result<()>>,
}

impl ApiServer {
    pub async fn bind(ctx: ApiContext, listen: &str) -> Result<Self, RuntimeError> {
        let listener = TcpListener::bind(listen).await.map_err(|source| RuntimeError::Bind {
            addr: listen.to_string(),
            source,
        })?;
        let addr = listener.local_addr()?;
        let closing = ctx.closing.clone();
        info!("operator API on http://{addr}");
        let app = router(ctx);
        let task = tokio::spawn(
            axum::serve(listener, app)
                .with_graceful_shutdown(closing.clone().cancelled_owned())
                .into_future(),
        );
        Ok(Self { addr, closing, task })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub async fn shutdown(self) -> Result<(), RuntimeError> {
        self.closing.cancel();
        self.task
            .await
            .map_err(|e| RuntimeError::Task(e.to_string()))?
            .map_err(RuntimeError::Io)
    }
}
