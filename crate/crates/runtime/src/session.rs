//! A live twin shadowing a plant over the telemetry protocol.
//!
//! Every received sample advances the twin once and is stored together with
//! the twin's output. Ingestion and stepping happen under one write lock, so
//! readers always see whole pairs. Parameter swaps are queued and applied
//! just before the next sample is processed.

use std::sync::Arc;
use std::time::Duration;

use log::{info, warn};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thermotwin_core::config::{ClockMode, TwinMode};
use thermotwin_core::controller::SETPOINT_BAND;
use thermotwin_core::sim::{ClosedLoop, OpenLoopTwin};
use thermotwin_core::{
    DivergenceReport, DivergenceTracker, PeltierParams, RunLog, SensorModel, SimError, Source,
    TelemetrySample, TwinModel,
};
use thermotwin_core::units::Kelvin;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::sync::{broadcast, mpsc, watch};
use tokio::time::Instant;
use tokio_util::sync::CancellationToken;

use crate::protocol::{tagged_telemetry, Message, PROTOCOL_VERSION};
use crate::RuntimeError;

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub endpoint: String,
    pub model: TwinModel,
    pub mode: TwinMode,
    /// Silence after which the session faults.
    pub telemetry_timeout: Duration,
    pub reconnect: bool,
    /// Delay before each STEP request when the plant runs the emulated clock.
    pub step_pace: Duration,
}

impl SessionConfig {
    pub fn new(endpoint: impl Into<String>, model: TwinModel) -> Self {
        Self {
            endpoint: endpoint.into(),
            model,
            mode: TwinMode::Shadow,
            telemetry_timeout: Duration::from_secs(10),
            reconnect: true,
            step_pace: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Connecting,
    Shadowing,
    Stopped,
    Faulted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    #[serde(with = "tagged_telemetry")]
    pub plant: TelemetrySample,
    #[serde(with = "tagged_telemetry")]
    pub twin: TelemetrySample,
}

/// Plant ticks that never reached the twin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    /// Last sample before the gap.
    pub after: f64,
    /// First sample after the gap.
    pub resumed: f64,
    pub missed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Connected,
    Disconnected { reason: String },
    Gap(Gap),
    ParamsSwapped { from: PeltierParams, to: PeltierParams },
    SetpointForwarded { value: f64 },
    Ended,
    Stopped,
    Faulted { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    /// Plant time of the last paired sample when the event happened.
    pub at: Option<f64>,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// What the push channel carries.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum StreamEvent {
    Pair(PairedSample),
    Event(SessionEvent),
    MatchProgress { generation: usize, best_cost: f64 },
}

impl StreamEvent {
    pub fn name(&self) -> &'static str {
        match self {
            StreamEvent::Pair(_) => "pair",
            StreamEvent::Event(_) => "event",
            StreamEvent::MatchProgress { .. } => "match",
        }
    }
}

/// Consistent view of the session for status queries.
#[derive(Debug, Clone, Serialize)]
pub struct SessionSnapshot {
    pub status: SessionStatus,
    pub mode: TwinMode,
    pub clock: Option<ClockMode>,
    pub dt: Option<f64>,
    pub samples: usize,
    pub last_t: Option<f64>,
    pub twin_params: PeltierParams,
    pub pending_params: Option<PeltierParams>,
    pub divergence: Option<DivergenceReport>,
    pub gaps: Vec<Gap>,
    pub events: Vec<SessionEvent>,
    pub max_step_seconds: f64,
    pub fault: Option<String>,
}

enum Engine {
    Shadow(OpenLoopTwin),
    Mirror(ClosedLoop),
}

impl Engine {
    fn start(mode: TwinMode, model: &TwinModel, first: &TelemetrySample, dt: f64) -> Self {
        let initial = Kelvin::from_celsius(first.y);
        match mode {
            TwinMode::Shadow => Engine::Shadow(OpenLoopTwin::new(model, initial)),
            TwinMode::Mirror => Engine::Mirror(
                ClosedLoop::new(model, SensorModel::ideal(), 0, initial).with_nominal_dt(dt),
            ),
        }
    }

    fn set_params(&mut self, p: PeltierParams) {
        match self {
            Engine::Shadow(t) => t.set_params(p),
            Engine::Mirror(c) => c.set_params(p),
        }
    }

    fn advance(&mut self, s: &TelemetrySample) -> Result<TelemetrySample, SimError> {
        match self {
            Engine::Shadow(twin) => {
                let p = twin.observe(s.t, s.u, s.t_env)?;
                Ok(TelemetrySample {
                    y: p.y,
                    i: p.i,
                    v: p.v,
                    ..*s
                })
            }
            Engine::Mirror(cl) => cl.sample(s.t, s.setpoint, Kelvin::from_celsius(s.t_env)),
        }
    }
}

struct State {
    status: SessionStatus,
    model: TwinModel,
    pending: Option<PeltierParams>,
    engine: Option<Engine>,
    pairs: Vec<PairedSample>,
    tracker: DivergenceTracker,
    gaps: Vec<Gap>,
    events: Vec<SessionEvent>,
    clock: Option<ClockMode>,
    dt: Option<f64>,
    max_step: Duration,
    fault: Option<String>,
}

struct Shared {
    state: RwLock<State>,
    mode: TwinMode,
    stream: broadcast::Sender<StreamEvent>,
    setpoints: mpsc::UnboundedSender<f64>,
    cancel: CancellationToken,
    done: watch::Sender<bool>,
}

impl Shared {
    fn event(&self, st: &mut State, kind: EventKind) {
        let ev = SessionEvent {
            at: st.pairs.last().map(|p| p.plant.t),
            kind,
        };
        info!("session event: {ev:?}");
        st.events.push(ev.clone());
        let _ = self.stream.send(StreamEvent::Event(ev));
    }

    fn set_status(&self, status: SessionStatus, kind: EventKind) {
        let mut st = self.state.write();
        if let EventKind::Faulted { reason } = &kind {
            st.fault = Some(reason.clone());
        }
        st.status = status;
        self.event(&mut st, kind);
    }

    /// Pairs one plant sample with the twin's output.
    fn ingest(&self, s: TelemetrySample) -> Result<(), SimError> {
        let started = std::time::Instant::now();
        let mut st = self.state.write();
        let dt = st.dt.unwrap_or(1.0);
        if let Some(last) = st.pairs.last().map(|p| p.plant.t) {
            if !(s.t > last) {
                warn!("ignoring out-of-order sample t={} after t={last}", s.t);
                return Ok(());
            }
            let steps = ((s.t - last) / dt).round();
            if steps >= 2.0 {
                let gap = Gap {
                    after: last,
                    resumed: s.t,
                    missed: steps as u64 - 1,
                };
                st.gaps.push(gap);
                self.event(&mut st, EventKind::Gap(gap));
            }
        }
        if let Some(p) = st.pending.take() {
            let from = st.model.params;
            st.model.params = p;
            if let Some(e) = st.engine.as_mut() {
                e.set_params(p);
            }
            self.event(&mut st, EventKind::ParamsSwapped { from, to: p });
        }
        let model = st.model;
        let engine = st
            .engine
            .get_or_insert_with(|| Engine::start(self.mode, &model, &s, dt));
        let twin = engine.advance(&s)?;
        st.tracker.push(s.t, s.y, twin.y, s.u, twin.u);
        let pair = PairedSample { plant: s, twin };
        st.pairs.push(pair);
        st.max_step = st.max_step.max(started.elapsed());
        drop(st);
        let _ = self.stream.send(StreamEvent::Pair(pair));
        Ok(())
    }
}

type Reader = Lines<BufReader<OwnedReadHalf>>;

struct Link {
    lines: Reader,
    writer: OwnedWriteHalf,
}

impl Link {
    async fn send(&mut self, msg: &Message) -> std::io::Result<()> {
        self.writer.write_all(msg.encode().as_bytes()).await
    }
}

struct ServerHello {
    dt: Option<f64>,
    clock: Option<ClockMode>,
}

async fn handshake(endpoint: &str, timeout: Duration) -> Result<(Link, ServerHello), RuntimeError> {
    let stream = TcpStream::connect(endpoint).await?;
    stream.set_nodelay(true)?;
    let (rd, writer) = stream.into_split();
    let mut link = Link {
        lines: BufReader::new(rd).lines(),
        writer,
    };
    link.send(&Message::hello()).await?;
    let line = tokio::time::timeout(timeout, link.lines.next_line())
        .await
        .map_err(|_| RuntimeError::Handshake("no HELLO reply".into()))??
        .ok_or_else(|| RuntimeError::Handshake("connection closed during handshake".into()))?;
    match Message::decode(&line) {
        Ok(Message::Hello { version, dt, clock }) if version == PROTOCOL_VERSION => {
            Ok((link, ServerHello { dt, clock }))
        }
        Ok(Message::Hello { version, .. }) => Err(RuntimeError::Handshake(format!(
            "plant speaks protocol version {version}, expected {PROTOCOL_VERSION}"
        ))),
        Ok(Message::Error { msg }) => Err(RuntimeError::Handshake(msg)),
        Ok(other) => Err(RuntimeError::Handshake(format!("expected HELLO, got {other:?}"))),
        Err(e) => Err(RuntimeError::Handshake(format!("bad HELLO reply: {e}"))),
    }
}

enum Exit {
    Ended,
    Stopped,
    Timeout,
    Disconnected(String),
    Fatal(String),
}

/// Handle to a running session. Clones share the session.
#[derive(Clone)]
pub struct TwinSession {
    shared: Arc<Shared>,
}

impl TwinSession {
    /// Connects and performs the handshake before returning, so that an
    /// unreachable plant or a version mismatch is reported immediately.
    pub async fn connect(cfg: SessionConfig) -> Result<Self, RuntimeError> {
        let (link, hello) = handshake(&cfg.endpoint, cfg.telemetry_timeout).await?;
        let (stream, _) = broadcast::channel(1024);
        let (sp_tx, sp_rx) = mpsc::unbounded_channel();
        let shared = Arc::new(Shared {
            state: RwLock::new(State {
                status: SessionStatus::Shadowing,
                model: cfg.model,
                pending: None,
                engine: None,
                pairs: Vec::new(),
                tracker: DivergenceTracker::new(),
                gaps: Vec::new(),
                events: Vec::new(),
                clock: hello.clock,
                dt: hello.dt,
                max_step: Duration::ZERO,
                fault: None,
            }),
            mode: cfg.mode,
            stream,
            setpoints: sp_tx,
            cancel: CancellationToken::new(),
            done: watch::channel(false).0,
        });
        {
            let mut st = shared.state.write();
            shared.event(&mut st, EventKind::Connected);
        }
        tokio::spawn(run(shared.clone(), cfg, link, sp_rx));
        Ok(Self { shared })
    }

    pub fn status(&self) -> SessionStatus {
        self.shared.state.read().status
    }

    pub fn is_live(&self) -> bool {
        matches!(self.status(), SessionStatus::Connecting | SessionStatus::Shadowing)
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let st = self.shared.state.read();
        SessionSnapshot {
            status: st.status,
            mode: self.shared.mode,
            clock: st.clock,
            dt: st.dt,
            samples: st.pairs.len(),
            last_t: st.pairs.last().map(|p| p.plant.t),
            twin_params: st.model.params,
            pending_params: st.pending,
            divergence: st.tracker.report(),
            gaps: st.gaps.clone(),
            events: st.events.clone(),
            max_step_seconds: st.max_step.as_secs_f64(),
            fault: st.fault.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.shared.state.read().pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Paired samples with plant time `>= since`.
    pub fn trace_since(&self, since: f64) -> Vec<PairedSample> {
        let st = self.shared.state.read();
        let from = st.pairs.partition_point(|p| p.plant.t < since);
        st.pairs[from..].to_vec()
    }

    pub fn report(&self) -> Option<DivergenceReport> {
        self.shared.state.read().tracker.report()
    }

    pub fn gaps(&self) -> Vec<Gap> {
        self.shared.state.read().gaps.clone()
    }

    pub fn events(&self) -> Vec<SessionEvent> {
        self.shared.state.read().events.clone()
    }

    pub fn model(&self) -> TwinModel {
        self.shared.state.read().model
    }

    /// Telemetry as received from the plant.
    pub fn plant_log(&self) -> RunLog {
        let st = self.shared.state.read();
        RunLog::new(Source::EmulatedPlant, None, st.pairs.iter().map(|p| p.plant).collect())
    }

    /// The twin's output on the plant's time grid.
    pub fn twin_log(&self) -> RunLog {
        let st = self.shared.state.read();
        RunLog::new(Source::LiveTwin, None, st.pairs.iter().map(|p| p.twin).collect())
    }

    /// Queues new twin parameters for the next tick.
    pub fn swap_params(&self, params: PeltierParams) {
        self.shared.state.write().pending = Some(params);
    }

    pub fn send_setpoint(&self, value: f64) -> Result<(), RuntimeError> {
        let (lo, hi) = SETPOINT_BAND;
        if !(value.is_finite() && (lo..=hi).contains(&value)) {
            return Err(RuntimeError::BadRequest(format!(
                "setpoint {value} outside [{lo}, {hi}] °C"
            )));
        }
        if !self.is_live() {
            return Err(RuntimeError::NotLive);
        }
        self.shared
            .setpoints
            .send(value)
            .map_err(|_| RuntimeError::NotLive)
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamEvent> {
        self.shared.stream.subscribe()
    }

    pub(crate) fn publish(&self, ev: StreamEvent) {
        let _ = self.shared.stream.send(ev);
    }

    /// Waits for the session to end on its own (END, fault or stop).
    pub async fn finished(&self) {
        let mut rx = self.shared.done.subscribe();
        let _ = rx.wait_for(|d| *d).await;
    }

    /// Stops the session and returns the final divergence report.
    pub async fn stop(&self) -> Result<DivergenceReport, RuntimeError> {
        self.shared.cancel.cancel();
        self.finished().await;
        self.report().ok_or(RuntimeError::NoSamples)
    }
}

async fn run(
    shared: Arc<Shared>,
    cfg: SessionConfig,
    link: Link,
    mut setpoints: mpsc::UnboundedReceiver<f64>,
) {
    let mut link = Some(link);
    let mut last_rx = Instant::now();
    loop {
        let current = match link.take() {
            Some(l) => l,
            None => match reconnect(&shared, &cfg, last_rx).await {
                Ok(l) => l,
                Err(exit) => {
                    finish(&shared, exit);
                    return;
                }
            },
        };
        match pump(&shared, &cfg, current, &mut setpoints, &mut last_rx).await {
            Exit::Disconnected(reason) if cfg.reconnect => {
                warn!("lost plant connection: {reason}");
                shared.set_status(SessionStatus::Connecting, EventKind::Disconnected { reason });
            }
            exit => {
                finish(&shared, exit);
                return;
            }
        }
    }
}

fn finish(shared: &Shared, exit: Exit) {
    let (status, kind) = match exit {
        Exit::Ended => (SessionStatus::Stopped, EventKind::Ended),
        Exit::Stopped => (SessionStatus::Stopped, EventKind::Stopped),
        Exit::Timeout => (
            SessionStatus::Faulted,
            EventKind::Faulted {
                reason: "telemetry timeout".into(),
            },
        ),
        Exit::Disconnected(reason) | Exit::Fatal(reason) => {
            (SessionStatus::Faulted, EventKind::Faulted { reason })
        }
    };
    shared.set_status(status, kind);
    shared.done.send_replace(true);
}

async fn reconnect(shared: &Shared, cfg: &SessionConfig, last_rx: Instant) -> Result<Link, Exit> {
    let deadline = last_rx + cfg.telemetry_timeout;
    let mut backoff = Duration::from_millis(50);
    loop {
        if shared.cancel.is_cancelled() {
            return Err(Exit::Stopped);
        }
        match handshake(&cfg.endpoint, cfg.telemetry_timeout).await {
            Ok((link, hello)) => {
                let mut st = shared.state.write();
                st.status = SessionStatus::Shadowing;
                st.clock = hello.clock;
                st.dt = hello.dt.or(st.dt);
                shared.event(&mut st, EventKind::Connected);
                return Ok(link);
            }
            Err(RuntimeError::Handshake(msg)) => return Err(Exit::Fatal(msg)),
            Err(e) => {
                if Instant::now() + backoff > deadline {
                    return Err(Exit::Timeout);
                }
                log::debug!("reconnect failed: {e}");
            }
        }
        tokio::select! {
            _ = shared.cancel.cancelled() => return Err(Exit::Stopped),
            _ = tokio::time::sleep(backoff) => {}
        }
        backoff = (backoff * 2).min(Duration::from_secs(1));
    }
}

async fn pump(
    shared: &Shared,
    cfg: &SessionConfig,
    mut link: Link,
    setpoints: &mut mpsc::UnboundedReceiver<f64>,
    last_rx: &mut Instant,
) -> Exit {
    let lockstep = shared.state.read().clock == Some(ClockMode::Emulated);
    *last_rx = (*last_rx).max(Instant::now());
    if lockstep && link.send(&Message::Step).await.is_err() {
        return Exit::Disconnected("write failed".into());
    }
    loop {
        tokio::select! {
            biased;
            _ = shared.cancel.cancelled() => return Exit::Stopped,
            Some(value) = setpoints.recv() => {
                if let Err(e) = forward_setpoint(shared, &mut link, value).await {
                    return Exit::Disconnected(e.to_string());
                }
            }
            line = tokio::time::timeout_at(*last_rx + cfg.telemetry_timeout, link.lines.next_line()) => {
                let line = match line {
                    Err(_) => return Exit::Timeout,
                    Ok(Ok(Some(l))) => l,
                    Ok(Ok(None)) => return Exit::Disconnected("connection closed".into()),
                    Ok(Err(e)) => return Exit::Disconnected(e.to_string()),
                };
                match Message::decode(&line) {
                    Ok(Message::Telemetry(s)) => {
                        *last_rx = Instant::now();
                        if let Err(e) = shared.ingest(s) {
                            return Exit::Fatal(format!("twin failed at t={}: {e}", s.t));
                        }
                        if lockstep {
                            while let Ok(value) = setpoints.try_recv() {
                                if let Err(e) = forward_setpoint(shared, &mut link, value).await {
                                    return Exit::Disconnected(e.to_string());
                                }
                            }
                            if !cfg.step_pace.is_zero() {
                                tokio::select! {
                                    _ = shared.cancel.cancelled() => return Exit::Stopped,
                                    _ = tokio::time::sleep(cfg.step_pace) => {}
                                }
                            }
                            if let Err(e) = link.send(&Message::Step).await {
                                return Exit::Disconnected(e.to_string());
                            }
                        }
                    }
                    Ok(Message::End) => return Exit::Ended,
                    Ok(Message::Error { msg }) => warn!("plant reported: {msg}"),
                    Ok(other) => warn!("ignoring unexpected {other:?} from plant"),
                    Err(e) => warn!("ignoring malformed line from plant: {e}"),
                }
            }
        }
    }
}

async fn forward_setpoint(shared: &Shared, link: &mut Link, value: f64) -> std::io::Result<()> {
    link.send(&Message::Setpoint { value }).await?;
    let mut st = shared.state.write();
    shared.event(&mut st, EventKind::SetpointForwarded { value });
    Ok(())
}
