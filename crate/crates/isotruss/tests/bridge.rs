use std::net::SocketAddr;
use std::time::{Duration, Instant};

use futures_util::StreamExt;
use isotruss::bridge::{Bridge, BridgeOptions, ViewSnapshot};
use isotruss::runlog::LogRecord;
use isotruss::{parse_scenario, Scenario};
use reqwest::StatusCode;
use serde_json::json;

const PACE: Duration = Duration::from_millis(40);

fn live() -> Scenario {
    parse_scenario(
        r#"{"name": "live", "control": {"mode": "closed_loop"},
            "analysis": {"rays": 4, "radial_step": 0.1, "max_radius": 1.0}}"#,
    )
    .unwrap()
}

struct Harness {
    base: String,
    client: reqwest::Client,
    _bridge: Bridge,
}

async fn start(overlay_rays: usize) -> Harness {
    let bridge = Bridge::start(&live(), BridgeOptions { pace: Some(PACE), overlay_rays }).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    let router = bridge.router();
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    Harness { base: format!("http://{addr}"), client: reqwest::Client::new(), _bridge: bridge }
}

impl Harness {
    async fn state(&self) -> ViewSnapshot {
        self.client.get(format!("{}/state", self.base)).send().await.unwrap().json().await.unwrap()
    }

    async fn post(&self, path: &str, body: serde_json::Value) -> StatusCode {
        self.client.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap().status()
    }

    async fn post_empty(&self, path: &str) -> StatusCode {
        self.client.post(format!("{}{path}", self.base)).send().await.unwrap().status()
    }

    async fn wait_for_steps(&self, n: usize) -> ViewSnapshot {
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            let s = self.state().await;
            if s.steps >= n || Instant::now() > deadline {
                return s;
            }
            tokio::time::sleep(PACE / 2).await;
        }
    }

    async fn apex_goal(&self, dx: f64, dy: f64) -> (f64, f64) {
        let s = self.state().await;
        let v = s.target_vertex;
        (s.home[2 * v] + dx, s.home[2 * v + 1] + dy)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn state_reports_topology_and_latest_step() {
    let h = start(0).await;
    let s = h.wait_for_steps(2).await;
    assert!(s.steps >= 2);
    assert_eq!(s.topology.edges.len(), 9);
    assert_eq!(s.dimension, 2);
    assert_eq!(s.step.as_ref().unwrap().k + 1, s.steps);
    assert!(s.error.is_none());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stream_pushes_consecutive_records() {
    let h = start(0).await;
    let url = h.base.replace("http://", "ws://") + "/stream";
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let mut ks = Vec::new();
    while ks.len() < 3 {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap().unwrap().unwrap();
        let r: LogRecord = serde_json::from_str(msg.to_text().unwrap()).unwrap();
        ks.push(r.k);
    }
    assert!(ks.windows(2).all(|w| w[1] == w[0] + 1), "{ks:?}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn failure_toggle_zeroes_command_within_two_steps() {
    let h = start(0).await;
    let (gx, gy) = h.apex_goal(0.4, 0.1).await;
    assert_eq!(h.post("/goal", json!({"x": gx, "y": gy})).await, StatusCode::ACCEPTED);
    let before = h.wait_for_steps(h.state().await.steps + 2).await;
    assert!(before.step.unwrap().d_cmd[2].abs() > 1e-6);

    let url = h.base.replace("http://", "ws://") + "/stream";
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let k0 = h.state().await.steps;
    assert_eq!(h.post("/failure", json!({"roller": 2, "failed": true})).await, StatusCode::ACCEPTED);
    let mut zeroed_at = None;
    while zeroed_at.is_none() {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap().unwrap().unwrap();
        let r: LogRecord = serde_json::from_str(msg.to_text().unwrap()).unwrap();
        if r.k >= k0 && r.d_cmd[2] == 0.0 && r.broken_known.contains(&2) {
            zeroed_at = Some(r.k);
        }
        assert!(r.k <= k0 + 2, "roller 2 still commanded at step {}", r.k);
    }
    assert_eq!(h.state().await.failures, [2]);

    assert_eq!(h.post("/failure", json!({"roller": 2, "failed": false})).await, StatusCode::ACCEPTED);
    let after = h.wait_for_steps(h.state().await.steps + 3).await;
    assert!(after.failures.is_empty());
    assert!(!after.step.unwrap().broken_known.contains(&2));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn goal_steers_the_next_step() {
    let h = start(0).await;
    h.wait_for_steps(1).await;
    for (dx, dy) in [(0.3, 0.0), (-0.3, 0.1)] {
        let (gx, gy) = h.apex_goal(dx, dy).await;
        assert_eq!(h.post("/goal", json!({"x": gx, "y": gy})).await, StatusCode::ACCEPTED);
        let k = h.state().await.steps;
        let a = h.wait_for_steps(k + 1).await.step.unwrap();
        let b = h.wait_for_steps(a.k + 2).await.step.unwrap();
        assert_eq!(b.goal, [gx, gy]);
        let v = 4;
        let (p, q) = ((a.x_est[2 * v], a.x_est[2 * v + 1]), (b.x_est[2 * v], b.x_est[2 * v + 1]));
        let toward = (q.0 - p.0) * (gx - p.0) + (q.1 - p.1) * (gy - p.1);
        assert!(toward > 0.0, "moved ({}, {}) for goal ({gx}, {gy})", q.0 - p.0, q.1 - p.1);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn payloads_are_validated() {
    let h = start(0).await;
    let unprocessable = StatusCode::UNPROCESSABLE_ENTITY;
    assert_eq!(h.post("/goal", json!({"x": 1.0, "y": 1.0, "z": 0.0})).await, unprocessable);
    assert_eq!(h.post("/goal", json!({"x": 1.0})).await, unprocessable);
    assert_eq!(h.post("/failure", json!({"roller": 1, "failed": true, "why": "x"})).await, unprocessable);
    assert_eq!(h.post("/failure", json!({"roller": 6, "failed": true})).await, unprocessable);
    assert_eq!(h.post("/barrier", json!({"alpha": 1.5, "sigma_min": 0.01, "enabled": true})).await, unprocessable);
    assert_eq!(h.post("/barrier", json!({"alpha": 0.5, "sigma_min": 0.01, "enabled": true, "gamma": 1})).await, unprocessable);
    let malformed = h
        .client
        .post(format!("{}/goal", h.base))
        .header("content-type", "application/json")
        .body("{\"x\": ")
        .send()
        .await
        .unwrap()
        .status();
    assert_eq!(malformed, StatusCode::BAD_REQUEST);
    assert!(h.state().await.failures.is_empty());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn barrier_update_is_reflected() {
    let h = start(0).await;
    assert_eq!(h.post("/barrier", json!({"alpha": 0.6, "sigma_min": 0.02, "enabled": false})).await, StatusCode::ACCEPTED);
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let b = h.state().await.barrier;
        if (b.alpha, b.sigma_min, b.enabled) == (0.6, 0.02, false) {
            break;
        }
        assert!(Instant::now() < deadline, "barrier not applied: {b:?}");
        tokio::time::sleep(PACE).await;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_freezes_state_and_resume_continues() {
    let h = start(0).await;
    h.wait_for_steps(2).await;
    assert_eq!(h.post_empty("/pause").await, StatusCode::ACCEPTED);
    tokio::time::sleep(PACE * 3).await;
    let a = h.state().await;
    assert!(a.paused);
    tokio::time::sleep(PACE * 4).await;
    let b = h.state().await;
    assert_eq!(a, b, "reloading while paused must reproduce the same view");
    assert_eq!(h.post_empty("/resume").await, StatusCode::ACCEPTED);
    let c = h.wait_for_steps(b.steps + 2).await;
    assert!(!c.paused);
    assert!(c.steps >= b.steps + 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn overlays_follow_the_failure_set() {
    let h = start(4).await;
    let deadline = Instant::now() + Duration::from_secs(60);
    while h.state().await.overlays.is_empty() {
        assert!(Instant::now() < deadline);
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    let nominal = h.state().await.overlays[0].clone();
    assert!(nominal.failure_set.is_empty());
    assert_eq!(nominal.points.len(), 4);
    assert_eq!(h.post("/failure", json!({"roller": 0, "failed": true})).await, StatusCode::ACCEPTED);
    loop {
        let o = h.state().await.overlays;
        if o.len() == 2 {
            assert_eq!(o[1].failure_set, [0]);
            break;
        }
        assert!(Instant::now() < deadline);
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
}
