//! HTTP/WebSocket bridge for a live operator console.
//!
//! The simulation runs on its own thread at `dt` pacing and takes commands
//! from a channel. HTTP handlers validate payloads, forward commands and read
//! the latest published state. Every step is broadcast to `/stream`
//! subscribers as one JSON text message.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use isotruss_core::analysis::{workspace, WorkspaceMode, WorkspaceOptions};
use isotruss_core::controller::ControlSpec;
use isotruss_core::sim::Simulation;
use isotruss_core::{Configuration, Truss};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::error::Result;
use crate::runlog::LogRecord;
use crate::runner::WallClock;
use crate::scenario::{BarrierSection, Scenario, TopologySpec};

#[derive(Debug, Clone, Copy)]
pub struct BridgeOptions {
    /// Wall time between steps; the scenario's `dt` when `None`.
    pub pace: Option<Duration>,
    /// Rays per workspace overlay; zero disables overlays.
    pub overlay_rays: usize,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self { pace: None, overlay_rays: 36 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GoalBody {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FailureBody {
    pub roller: usize,
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierBody {
    pub alpha: f64,
    pub sigma_min: f64,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Command {
    Goal(DVector<f64>),
    Failure { roller: usize, failed: bool },
    Barrier(BarrierBody),
    Pause,
    Resume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub failure_set: Vec<usize>,
    /// `(angle, extension)` per ray about the target's home position.
    pub rays: Vec<(f64, f64)>,
    pub points: Vec<[f64; 2]>,
    pub area: f64,
}

/// Everything a freshly loaded console needs to draw the current frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSnapshot {
    pub scenario_name: String,
    pub topology: TopologySpec,
    pub dimension: usize,
    pub target_vertex: usize,
    pub home: Vec<f64>,
    pub dt: f64,
    pub paused: bool,
    pub steps: usize,
    pub goal: Vec<f64>,
    pub barrier: BarrierSection,
    /// Rollers failed in the simulated hardware.
    pub failures: Vec<usize>,
    pub step: Option<LogRecord>,
    pub overlays: Vec<Overlay>,
    pub error: Option<String>,
}

struct Shared {
    view: RwLock<ViewSnapshot>,
    stream: broadcast::Sender<Arc<str>>,
    stop: AtomicBool,
}

/// A running simulation plus the channel feeding it.
pub struct Bridge {
    shared: Arc<Shared>,
    commands: mpsc::Sender<Command>,
    rollers: usize,
    threads: Vec<JoinHandle<()>>,
}

#[derive(Clone)]
struct AppState {
    shared: Arc<Shared>,
    commands: mpsc::Sender<Command>,
    rollers: usize,
}

impl Bridge {
    /// Validates the scenario and starts the simulation thread, paused only
    /// by command.
    pub fn start(scenario: &Scenario, options: BridgeOptions) -> Result<Bridge> {
        let setup = scenario.setup()?;
        let d = setup.truss.dimension();
        let rollers = setup.truss.roller_count();
        let spec = setup.spec.clone();
        let view = ViewSnapshot {
            scenario_name: scenario.name.clone(),
            topology: setup.truss.topology().into(),
            dimension: d,
            target_vertex: spec.target_vertex,
            home: setup.home.positions.iter().copied().collect(),
            dt: spec.dt(),
            paused: false,
            steps: 0,
            goal: spec.goal.iter().copied().collect(),
            barrier: BarrierSection { enabled: spec.barrier_enabled, alpha: spec.barrier.alpha, sigma_min: spec.barrier.sigma_min },
            failures: Vec::new(),
            step: None,
            overlays: Vec::new(),
            error: None,
        };
        let (stream, _) = broadcast::channel(256);
        let shared = Arc::new(Shared { view: RwLock::new(view), stream, stop: AtomicBool::new(false) });
        let (tx, rx) = mpsc::channel();
        let pace = options.pace.unwrap_or_else(|| Duration::from_secs_f64(spec.dt()));

        let mut threads = Vec::new();
        let overlay_tx = if options.overlay_rays > 0 {
            let (otx, orx) = mpsc::channel::<(BTreeSet<usize>, ControlSpec)>();
            let (truss, home) = (setup.truss.clone(), setup.home.clone());
            let sh = shared.clone();
            let rays = options.overlay_rays;
            let opts = WorkspaceOptions { n_rays: rays, mode: WorkspaceMode::Dtcbf, ..setup.workspace };
            threads.push(std::thread::spawn(move || overlay_worker(&truss, &home, opts, orx, &sh)));
            otx.send((BTreeSet::new(), spec.clone())).ok();
            Some(otx)
        } else {
            None
        };

        let sh = shared.clone();
        threads.push(std::thread::spawn(move || {
            let mut setup = setup;
            setup.sim.max_steps = usize::MAX;
            let sim = Simulation::new(&setup.truss, setup.spec, setup.plant, setup.sim, setup.home);
            match sim {
                Ok(sim) => sim_loop(sim, rx, pace, &sh, overlay_tx),
                Err(e) => sh.view.write().unwrap().error = Some(e.to_string()),
            }
        }));
        Ok(Bridge { shared, commands: tx, rollers, threads })
    }

    pub fn router(&self) -> Router {
        let state = AppState { shared: self.shared.clone(), commands: self.commands.clone(), rollers: self.rollers };
        Router::new()
            .route("/state", get(get_state))
            .route("/stream", get(stream))
            .route("/goal", post(post_goal))
            .route("/failure", post(post_failure))
            .route("/barrier", post(post_barrier))
            .route("/pause", post(post_pause))
            .route("/resume", post(post_resume))
            .with_state(state)
    }

    pub fn snapshot(&self) -> ViewSnapshot {
        self.shared.view.read().unwrap().clone()
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            t.join().ok();
        }
    }
}

impl Drop for Bridge {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn sim_loop(
    mut sim: Simulation<'_>,
    rx: mpsc::Receiver<Command>,
    pace: Duration,
    shared: &Shared,
    overlay: Option<mpsc::Sender<(BTreeSet<usize>, ControlSpec)>>,
) {
    let clock = WallClock::new();
    let mut paused = false;
    let mut next = Instant::now();
    while !shared.stop.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now < next {
            match rx.recv_timeout((next - now).min(Duration::from_millis(50))) {
                Ok(cmd) => apply(&mut sim, cmd, &mut paused, shared, overlay.as_ref()),
                Err(mpsc::RecvTimeoutError::Timeout) => {}
                Err(mpsc::RecvTimeoutError::Disconnected) => break,
            }
            continue;
        }
        next += pace;
        if paused {
            continue;
        }
        match sim.step(&clock) {
            Ok(Some(record)) => {
                let record = LogRecord::from(&record);
                let text: Arc<str> = serde_json::to_string(&record).expect("record serializes").into();
                {
                    let mut view = shared.view.write().unwrap();
                    view.steps += 1;
                    view.goal = record.goal.clone();
                    view.step = Some(record);
                }
                shared.stream.send(text).ok();
            }
            Ok(None) => {}
            Err(e) => {
                paused = true;
                let mut view = shared.view.write().unwrap();
                view.paused = true;
                view.error = Some(e.to_string());
            }
        }
    }
}

fn apply(
    sim: &mut Simulation<'_>,
    cmd: Command,
    paused: &mut bool,
    shared: &Shared,
    overlay: Option<&mpsc::Sender<(BTreeSet<usize>, ControlSpec)>>,
) {
    let mut refresh_overlay = false;
    match cmd {
        Command::Goal(goal) => {
            sim.set_goal(goal.clone());
            shared.view.write().unwrap().goal = goal.iter().copied().collect();
        }
        Command::Failure { roller, failed } => {
            if let Err(e) = sim.set_failure(roller, failed) {
                shared.view.write().unwrap().error = Some(e.to_string());
                return;
            }
            shared.view.write().unwrap().failures = sim.plant.config.failed.iter().copied().collect();
            refresh_overlay = true;
        }
        Command::Barrier(b) => {
            let spec = &mut sim.controller.spec;
            spec.barrier.alpha = b.alpha;
            spec.barrier.sigma_min = b.sigma_min;
            spec.barrier_enabled = b.enabled;
            shared.view.write().unwrap().barrier = BarrierSection { enabled: b.enabled, alpha: b.alpha, sigma_min: b.sigma_min };
            refresh_overlay = true;
        }
        Command::Pause => *paused = true,
        Command::Resume => {
            *paused = false;
            shared.view.write().unwrap().error = None;
        }
    }
    shared.view.write().unwrap().paused = *paused;
    if let (true, Some(tx)) = (refresh_overlay, overlay) {
        tx.send((sim.controller.spec.broken_rollers.clone(), sim.controller.spec.clone())).ok();
    }
}

fn overlay_worker(
    truss: &Truss,
    home: &Configuration,
    options: WorkspaceOptions,
    rx: mpsc::Receiver<(BTreeSet<usize>, ControlSpec)>,
    shared: &Shared,
) {
    let origin = |spec: &ControlSpec| truss.vertex_position(home, spec.target_vertex);
    while !shared.stop.load(Ordering::SeqCst) {
        let Ok(mut job) = rx.recv_timeout(Duration::from_millis(100)) else { continue };
        while let Ok(newer) = rx.try_recv() {
            job = newer;
        }
        let (failures, spec) = job;
        let Ok(poly) = workspace(truss, home, &spec, &failures, &options) else { continue };
        let o = origin(&spec);
        let overlay = Overlay {
            failure_set: failures.iter().copied().collect(),
            points: poly.rays.iter().map(|&(a, r)| [o[0] + r * a.cos(), o[1] + r * a.sin()]).collect(),
            rays: poly.rays,
            area: poly.area,
        };
        let mut view = shared.view.write().unwrap();
        // Keep the nominal polygon plus the latest degraded one.
        view.overlays.retain(|o| o.failure_set.is_empty());
        if overlay.failure_set.is_empty() {
            view.overlays.clear();
        }
        view.overlays.push(overlay);
    }
}

fn rejected(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

fn forward(state: &AppState, cmd: Command) -> Response {
    match state.commands.send(cmd) {
        Ok(()) => (StatusCode::ACCEPTED, Json(serde_json::json!({ "ok": true }))).into_response(),
        Err(_) => rejected(StatusCode::SERVICE_UNAVAILABLE, "simulation stopped"),
    }
}

async fn get_state(State(state): State<AppState>) -> Json<ViewSnapshot> {
    Json(state.shared.view.read().unwrap().clone())
}

async fn post_goal(State(state): State<AppState>, Json(body): Json<GoalBody>) -> Response {
    let d = state.shared.view.read().unwrap().dimension;
    if d != 2 {
        return rejected(StatusCode::UNPROCESSABLE_ENTITY, "goal {x, y} needs a planar truss");
    }
    if !(body.x.is_finite() && body.y.is_finite()) {
        return rejected(StatusCode::UNPROCESSABLE_ENTITY, "goal must be finite");
    }
    forward(&state, Command::Goal(DVector::from_row_slice(&[body.x, body.y])))
}

async fn post_failure(State(state): State<AppState>, Json(body): Json<FailureBody>) -> Response {
    if body.roller >= state.rollers {
        return rejected(StatusCode::UNPROCESSABLE_ENTITY, format!("no roller {}", body.roller));
    }
    forward(&state, Command::Failure { roller: body.roller, failed: body.failed })
}

async fn post_barrier(State(state): State<AppState>, Json(body): Json<BarrierBody>) -> Response {
    if !(body.alpha > 0.0 && body.alpha < 1.0) {
        return rejected(StatusCode::UNPROCESSABLE_ENTITY, "alpha must lie in (0, 1)");
    }
    if !(body.sigma_min >= 0.0 && body.sigma_min.is_finite()) {
        return rejected(StatusCode::UNPROCESSABLE_ENTITY, "sigma_min must be >= 0");
    }
    forward(&state, Command::Barrier(body))
}

async fn post_pause(State(state): State<AppState>) -> Response {
    forward(&state, Command::Pause)
}

async fn post_resume(State(state): State<AppState>) -> Response {
    forward(&state, Command::Resume)
}

async fn stream(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    let rx = state.shared.stream.subscribe();
    ws.on_upgrade(move |socket| push_records(socket, rx))
}

async fn push_records(mut socket: WebSocket, mut rx: broadcast::Receiver<Arc<str>>) {
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    if socket.send(Message::Text(text.as_ref().into())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

/// Binds `addr`, serves until Ctrl-C, then stops the simulation.
pub async fn serve(scenario: &Scenario, options: BridgeOptions, addr: SocketAddr) -> Result<()> {
    let bridge = Bridge::start(scenario, options)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| crate::Error::Io { path: addr.to_string(), source })?;
    eprintln!("bridge listening on http://{}", listener.local_addr().map_or(addr, |a| a));
    axum::serve(listener, bridge.router())
        .with_graceful_shutdown(async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await
        .map_err(|source| crate::Error::Io { path: addr.to_string(), source })?;
    bridge.shutdown();
    Ok(())
}
