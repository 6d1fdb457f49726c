use isotruss::runlog::{LogRecord, RunLog};
use isotruss::scenario::Mode;
use isotruss::{parse_scenario, run_scenario, Error, Scenario, WallClock};
use isotruss_core::controller::NullClock;

fn square(mode: Mode) -> Scenario {
    let mut s = parse_scenario(
        r#"{"name": "square", "path": {"waypoints": [[-0.1, 0], [0.1, 0], [0.1, 0.2], [-0.1, 0.2]],
            "relative_to_home": true, "timed": true, "waypoint_budget": 6},
            "plant": {"gains": [1, 0.95, 1.05, 0.97, 1.03, 0.98], "encoder_noise_std": 1e-4, "seed": 11}}"#,
    )
    .unwrap();
    s.control.mode = mode;
    s
}

/// Log bytes with the wall-clock fields zeroed.
fn without_wall_clock(log: &RunLog) -> Vec<u8> {
    let mut log = log.clone();
    log.header.created_unix_ms = 0;
    for r in &mut log.records {
        r.solve_time = 0.0;
    }
    log.to_bytes()
}

#[test]
fn replay_is_byte_identical_apart_from_wall_clock() {
    for mode in [Mode::OpenLoop, Mode::ClosedLoop] {
        let s = square(mode);
        let a = run_scenario(&s, &WallClock::new()).unwrap();
        std::thread::sleep(std::time::Duration::from_millis(5));
        let b = run_scenario(&s, &WallClock::new()).unwrap();
        assert_eq!(without_wall_clock(&a), without_wall_clock(&b));
        let c = run_scenario(&s, &NullClock).unwrap();
        let d = run_scenario(&s, &NullClock).unwrap();
        let strip = |l: &RunLog| {
            let mut l = l.clone();
            l.header.created_unix_ms = 0;
            l.to_bytes()
        };
        assert_eq!(strip(&c), strip(&d));
    }
}

#[test]
fn write_read_round_trip() {
    let log = run_scenario(&square(Mode::ClosedLoop), &WallClock::new()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.jsonl");
    log.save(path.to_str().unwrap()).unwrap();
    let back = RunLog::load(path.to_str().unwrap()).unwrap();
    assert_eq!(back, log);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + log.records.len());
}

#[test]
fn header_identifies_the_scenario() {
    let s = square(Mode::OpenLoop);
    let log = run_scenario(&s, &NullClock).unwrap();
    assert_eq!(log.header.scenario_sha256, s.sha256());
    assert_eq!(log.header.scenario_sha256.len(), 64);
    let mut other = s.clone();
    other.plant.seed += 1;
    assert_ne!(other.sha256(), s.sha256());
}

#[test]
fn steps_are_strictly_increasing() {
    let log = run_scenario(&square(Mode::OpenLoop), &NullClock).unwrap();
    assert!(log.records.windows(2).all(|w| w[1].k == w[0].k + 1));
    let mut broken = log.clone();
    let dup: LogRecord = broken.records[1].clone();
    broken.records.insert(2, dup);
    let err = RunLog::read(broken.to_bytes().as_slice()).unwrap_err();
    assert!(matches!(err, Error::RunLog(_)), "{err}");
}

#[test]
fn barrier_enabled_runs_never_go_negative() {
    let mut s = square(Mode::ClosedLoop);
    s.path.waypoints = vec![vec![3.0, 3.0]];
    s.path.relative_to_home = false;
    s.path.timed = false;
    s.path.waypoint_budget = 80;
    let log = run_scenario(&s, &NullClock).unwrap();
    assert!(log.header.error.is_none());
    assert!(log.min_h() >= -1e-6, "min h {}", log.min_h());
}

#[test]
fn empty_waypoints_hold_still() {
    let mut s = Scenario::default();
    s.path.max_steps = 4;
    let log = run_scenario(&s, &NullClock).unwrap();
    assert_eq!(log.records.len(), 4);
    let h0 = log.records[0].h;
    assert!(log.records.iter().all(|r| (r.h - h0).abs() < 1e-12));
}
