//! TCP server exposing the emulated plant over the telemetry protocol.
//!
//! One task owns the [`PlantLoop`]. Connection tasks forward client commands
//! to it over a channel and receive outgoing lines through a per-client
//! [`Outbox`], which drops its oldest line when full so that a slow client
//! never stalls the plant.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use log::{debug, error, info, warn};
use parking_lot::Mutex;
use serde::Serialize;
use thermotwin_core::config::{ClockMode, PlantSection};
use thermotwin_core::controller::SETPOINT_BAND;
use thermotwin_core::{PlantLoop, PlantTruth, RunLog, Scenario};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot, watch, Notify};
use tokio::task::JoinHandle;
use tokio::time::Instant;
use tokio_util::sync::CancellationToken;
use tokio_util::task::TaskTracker;

use crate::protocol::{Message, PROTOCOL_VERSION};
use crate::RuntimeError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantOptions {
    pub clock: ClockMode,
    pub speedup: f64,
    pub run_forever: bool,
    pub queue_capacity: usize,
}

impl Default for PlantOptions {
    fn default() -> Self {
        Self::from(&PlantSection::default())
    }
}

impl From<&PlantSection> for PlantOptions {
    fn from(p: &PlantSection) -> Self {
        Self {
            clock: p.clock,
            speedup: p.speedup,
            run_forever: p.run_forever,
            queue_capacity: p.queue_capacity,
        }
    }
}

/// Outgoing line queue of one client.
struct Outbox {
    queue: Mutex<VecDeque<Arc<str>>>,
    capacity: usize,
    dropped: AtomicU64,
    notify: Notify,
    closed: CancellationToken,
}

impl Outbox {
    fn new(capacity: usize) -> Self {
        Self {
            queue: Mutex::new(VecDeque::with_capacity(capacity.min(1024))),
            capacity,
            dropped: AtomicU64::new(0),
            notify: Notify::new(),
            closed: CancellationToken::new(),
        }
    }

    /// Returns false when the oldest queued line had to be discarded.
    fn push(&self, line: Arc<str>) -> bool {
        let mut q = self.queue.lock();
        let mut kept = true;
        if q.len() >= self.capacity {
            q.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
            kept = false;
        }
        q.push_back(line);
        drop(q);
        self.notify.notify_one();
        kept
    }

    /// Stops delivery. Queued lines are still written unless `discard`.
    fn close(&self, discard: bool) {
        if discard {
            self.queue.lock().clear();
        }
        self.closed.cancel();
        self.notify.notify_one();
    }

    async fn next(&self) -> Option<Arc<str>> {
        loop {
            if let Some(line) = self.queue.lock().pop_front() {
                return Some(line);
            }
            if self.closed.is_cancelled() {
                return None;
            }
            self.notify.notified().await;
        }
    }
}

enum Command {
    Step,
    Setpoint(f64),
    Subscribe(Arc<Outbox>),
    Kick,
    Outage { ticks: u64, done: oneshot::Sender<()> },
}

#[derive(Debug, Default)]
struct Counters {
    ticks: AtomicU64,
    dropped: AtomicU64,
    overruns: AtomicU64,
    clients: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PlantStats {
    pub ticks: u64,
    /// Lines discarded from full client queues.
    pub dropped_messages: u64,
    /// Wall-clock ticks that started later than their deadline.
    pub overruns: u64,
    pub clients: usize,
}

/// Handle to a running plant server.
pub struct PlantServer {
    addr: SocketAddr,
    commands: mpsc::Sender<Command>,
    shutdown: CancellationToken,
    counters: Arc<Counters>,
    finished: watch::Receiver<bool>,
    plant_task: JoinHandle<RunLog>,
    accept_task: JoinHandle<()>,
    connections: TaskTracker,
}

impl PlantServer {
    pub async fn bind(
        truth: PlantTruth,
        scenario: Scenario,
        opts: PlantOptions,
        listen: &str,
    ) -> Result<Self, RuntimeError> {
        let mut plant = PlantLoop::new(truth, scenario.clone())?;
        if opts.run_forever {
            plant = plant.unbounded();
        }
        let listener = TcpListener::bind(listen).await.map_err(|source| RuntimeError::Bind {
            addr: listen.to_string(),
            source,
        })?;
        let addr = listener.local_addr()?;
        info!("plant listening on {addr} ({:?} clock)", opts.clock);

        let (tx, rx) = mpsc::channel(1024);
        let shutdown = CancellationToken::new();
        let counters = Arc::new(Counters::default());
        let (fin_tx, finished) = watch::channel(plant.finished());

        let hello = Message::Hello {
            version: PROTOCOL_VERSION,
            dt: Some(scenario.dt_control),
            clock: Some(opts.clock),
        };
        let plant_task = tokio::spawn(
            PlantTask {
                plant,
                opts,
                outboxes: Vec::new(),
                counters: counters.clone(),
                finished: fin_tx,
            }
            .run(rx, shutdown.clone()),
        );
        let connections = TaskTracker::new();
        let accept_task = tokio::spawn(accept_loop(
            listener,
            Arc::from(hello.encode()),
            opts,
            tx.clone(),
            shutdown.clone(),
            connections.clone(),
        ));
        Ok(Self {
            addr,
            commands: tx,
            shutdown,
            counters,
            finished,
            plant_task,
            accept_task,
            connections,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> PlantStats {
        PlantStats {
            ticks: self.counters.ticks.load(Ordering::Relaxed),
            dropped_messages: self.counters.dropped.load(Ordering::Relaxed),
            overruns: self.counters.overruns.load(Ordering::Relaxed),
            clients: self.counters.clients.load(Ordering::Relaxed),
        }
    }

    /// Drops every client connection.
    pub async fn kick_clients(&self) {
        let _ = self.commands.send(Command::Kick).await;
    }

    /// Drops every client, then advances the plant `ticks` times with
    /// nobody listening.
    pub async fn outage(&self, ticks: u64) {
        let (done, wait) = oneshot::channel();
        if self.commands.send(Command::Outage { ticks, done }).await.is_ok() {
            let _ = wait.await;
        }
    }

    /// Resolves once a bounded run has produced all its ticks.
    pub async fn wait_finished(&self) {
        let mut rx = self.finished.clone();
        let _ = rx.wait_for(|f| *f).await;
    }

    /// Stops serving, lets clients receive what was already queued and
    /// returns the plant's own record of the run.
    pub async fn shutdown(self) -> Result<RunLog, RuntimeError> {
        self.shutdown.cancel();
        let _ = self.accept_task.await;
        let log = self
            .plant_task
            .await
            .map_err(|e| RuntimeError::Task(e.to_string()))?;
        self.connections.close();
        self.connections.wait().await;
        Ok(log)
    }
}

struct PlantTask {
    plant: PlantLoop,
    opts: PlantOptions,
    outboxes: Vec<Arc<Outbox>>,
    counters: Arc<Counters>,
    finished: watch::Sender<bool>,
}

impl PlantTask {
    async fn run(mut self, mut rx: mpsc::Receiver<Command>, shutdown: CancellationToken) -> RunLog {
        let period = Duration::from_secs_f64(self.plant.dt() / self.opts.speedup);
        let wall = self.opts.clock == ClockMode::Wall;
        let mut deadline = Instant::now();
        loop {
            let ticking = wall && !self.plant.finished();
            tokio::select! {
                biased;
                _ = shutdown.cancelled() => break,
                cmd = rx.recv() => match cmd {
                    Some(cmd) => self.handle(cmd),
                    None => break,
                },
                _ = tokio::time::sleep_until(deadline), if ticking => {
                    self.tick();
                    deadline += period;
                    let now = Instant::now();
                    if now > deadline {
                        let n = self.counters.overruns.fetch_add(1, Ordering::Relaxed) + 1;
                        warn!(
                            "clock overrun: tick {} is {:?} late ({n} overruns so far)",
                            self.plant.ticks_done(),
                            now - deadline
                        );
                    }
                }
            }
        }
        for o in self.outboxes.drain(..) {
            o.close(false);
        }
        self.plant.run_log()
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Step => self.tick(),
            Command::Setpoint(v) => {
                debug!("setpoint {v} from tick {}", self.plant.ticks_done());
                self.plant.set_setpoint(v);
            }
            Command::Subscribe(o) => {
                self.outboxes.push(o);
                self.counters.clients.store(self.outboxes.len(), Ordering::Relaxed);
            }
            Command::Kick => self.kick(),
            Command::Outage { ticks, done } => {
                self.kick();
                for _ in 0..ticks {
                    self.tick();
                }
                let _ = done.send(());
            }
        }
    }

    fn kick(&mut self) {
        info!("dropping {} client(s)", self.outboxes.len());
        for o in self.outboxes.drain(..) {
            o.close(true);
        }
        self.counters.clients.store(0, Ordering::Relaxed);
    }

    fn tick(&mut self) {
        if self.plant.finished() {
            self.publish(&Message::End);
            return;
        }
        match self.plant.step() {
            Ok(Some(s)) => {
                self.counters.ticks.fetch_add(1, Ordering::Relaxed);
                self.publish(&Message::Telemetry(s));
                if self.plant.finished() {
                    info!("run complete after {} ticks", self.plant.ticks_done());
                    self.publish(&Message::End);
                    let _ = self.finished.send(true);
                }
            }
            Ok(None) => self.publish(&Message::End),
            Err(e) => {
                error!("plant fault: {e}");
                self.publish(&Message::error(format!("plant fault: {e}")));
            }
        }
    }

    fn publish(&mut self, msg: &Message) {
        let line: Arc<str> = Arc::from(msg.encode());
        self.outboxes.retain(|o| !o.closed.is_cancelled());
        for o in &self.outboxes {
            if !o.push(line.clone()) {
                let n = self.counters.dropped.fetch_add(1, Ordering::Relaxed) + 1;
                warn!("client queue full, dropped oldest message ({n} total)");
            }
        }
        self.counters.clients.store(self.outboxes.len(), Ordering::Relaxed);
    }
}

async fn accept_loop(
    listener: TcpListener,
    hello: Arc<str>,
    opts: PlantOptions,
    commands: mpsc::Sender<Command>,
    shutdown: CancellationToken,
    connections: TaskTracker,
) {
    loop {
        tokio::select! {
            _ = shutdown.cancelled() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    debug!("client {peer} connected");
                    let conn = Connection {
                        hello: hello.clone(),
                        opts,
                        commands: commands.clone(),
                        shutdown: shutdown.clone(),
                    };
                    connections.spawn(conn.serve(stream));
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    }
}

struct Connection {
    hello: Arc<str>,
    opts: PlantOptions,
    commands: mpsc::Sender<Command>,
    shutdown: CancellationToken,
}

impl Connection {
    async fn serve(self, stream: TcpStream) {
        let (rd, mut wr) = stream.into_split();
        let outbox = Arc::new(Outbox::new(self.opts.queue_capacity));
        let writer = {
            let outbox = outbox.clone();
            tokio::spawn(async move {
                while let Some(line) = outbox.next().await {
                    if wr.write_all(line.as_bytes()).await.is_err() {
                        break;
                    }
                }
                let _ = wr.shutdown().await;
            })
        };
        let mut lines = BufReader::new(rd).lines();
        let mut greeted = false;
        loop {
            tokio::select! {
                _ = self.shutdown.cancelled() => break,
                _ = outbox.closed.cancelled() => break,
                line = lines.next_line() => match line {
                    Ok(Some(line)) => {
                        if !self.on_line(&line, &outbox, &mut greeted).await {
                            break;
                        }
                    }
                    _ => break,
                },
            }
        }
        outbox.close(false);
        let _ = writer.await;
    }

    fn reply(outbox: &Outbox, msg: Message) {
        outbox.push(Arc::from(msg.encode()));
    }

    /// Returns false once the plant loop is gone.
    async fn on_line(&self, line: &str, outbox: &Arc<Outbox>, greeted: &mut bool) -> bool {
        if line.trim().is_empty() {
            return true;
        }
        let msg = match Message::decode(line) {
            Ok(m) => m,
            Err(e) => {
                Self::reply(outbox, Message::error(format!("malformed message: {e}")));
                return true;
            }
        };
        let cmd = match msg {
            Message::Hello { version, .. } if version != PROTOCOL_VERSION => {
                Self::reply(
                    outbox,
                    Message::error(format!(
                        "unsupported protocol version {version}, expected {PROTOCOL_VERSION}"
                    )),
                );
                return true;
            }
            Message::Hello { .. } => {
                outbox.push(self.hello.clone());
                if *greeted {
                    return true;
                }
                *greeted = true;
                Command::Subscribe(outbox.clone())
            }
            _ if !*greeted => {
                Self::reply(outbox, Message::error("HELLO required before any other message"));
                return true;
            }
            Message::Setpoint { value } => {
                let (lo, hi) = SETPOINT_BAND;
                if !(value.is_finite() && (lo..=hi).contains(&value)) {
                    Self::reply(
                        outbox,
                        Message::error(format!("setpoint {value} outside [{lo}, {hi}] °C")),
                    );
                    return true;
                }
                Command::Setpoint(value)
            }
            Message::Step if self.opts.clock == ClockMode::Wall => {
                Self::reply(outbox, Message::error("STEP is only accepted with the emulated clock"));
                return true;
            }
            Message::Step => Command::Step,
            Message::Error { msg } => {
                warn!("client reported error: {msg}");
                return true;
            }
            Message::Telemetry(_) | Message::End => {
                Self::reply(outbox, Message::error("unexpected message from client"));
                return true;
            }
        };
        self.commands.send(cmd).await.is_ok()
    }
}
