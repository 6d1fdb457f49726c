use std::path::PathBuf;

use isotruss::scenario::{BarrierSection, FailureSpec, FilterSpec, Mode, SweepMode, TrussSpec};
use isotruss::{parse_scenario, run_scenario, Scenario, SchemaErrorKind, WallClock};
use proptest::prelude::*;

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn shipped(name: &str) -> Scenario {
    let text = std::fs::read_to_string(scenarios_dir().join(name)).unwrap();
    parse_scenario(&text).unwrap()
}

#[test]
fn every_shipped_scenario_parses_and_round_trips() {
    let mut n = 0;
    for entry in std::fs::read_dir(scenarios_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(&path).unwrap();
            let s = parse_scenario(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(parse_scenario(&s.print()).unwrap(), s);
            n += 1;
        }
    }
    assert!(n >= 10);
}

#[test]
fn broken_1_and_4_scenario_runs() {
    let s = shipped("table1_broken1_4_cl_aware.json");
    let failed: Vec<usize> = s.plant.failures.iter().map(|f| f.roller).collect();
    assert_eq!(failed, [0, 3]);
    let log = run_scenario(&s, &WallClock::new()).unwrap();
    assert!(log.header.error.is_none(), "{:?}", log.header.error);
    assert_eq!(log.records.len(), 50);
    assert!(log.header.waypoints_reached.iter().all(|&r| r));
    for r in &log.records {
        assert_eq!(r.d_cmd[0], 0.0);
        assert_eq!(r.d_cmd[3], 0.0);
    }
}

#[test]
fn schema_errors_carry_paths() {
    let cases = [
        (r#"{"plant": {"failures": [{"roller": 0, "time": -1}]}}"#, "plant.failures[0].time", SchemaErrorKind::Invariant),
        (r#"{"plant": {"failures": [{"roller": 9, "time": 1}]}}"#, "plant.failures[0].roller", SchemaErrorKind::Invariant),
        (r#"{"control": {"barrier": {"alpha": 1.0}}}"#, "control.barrier.alpha", SchemaErrorKind::Invariant),
        (r#"{"control": {"barrier": {"sigma_min": 5.0}}}"#, "control.barrier.sigma_min", SchemaErrorKind::Invariant),
        (r#"{"path": {"waypoints": [[1.0]]}}"#, "path.waypoints[0]", SchemaErrorKind::Invariant),
        (r#"{"estimator": {"filter": {"kind": "sliding", "window": 0}}}"#, "estimator.filter.window", SchemaErrorKind::Invariant),
        (r#"{"control": {"mode": "sideways"}}"#, "control.mode", SchemaErrorKind::TypeMismatch),
        (r#"{"plant": {"seed": -3}}"#, "plant.seed", SchemaErrorKind::TypeMismatch),
        (r#"{"bogus": 1}"#, "bogus", SchemaErrorKind::UnknownField),
        (r#"{"control": "#, "control", SchemaErrorKind::Syntax),
    ];
    for (text, path, kind) in cases {
        let e = parse_scenario(text).unwrap_err();
        assert_eq!((e.0[0].path.as_str(), e.0[0].kind), (path, kind), "{text}: {e}");
    }
}

#[test]
fn custom_topology_is_validated() {
    let text = r#"{"truss": {"kind": "custom", "positions": [0, 0, 1, 0, 0, 1],
        "topology": {"dimension": 2, "vertex_count": 3, "edges": [[0, 1], [1, 2], [0, 2]],
                     "triangles": [[0, 1, 2]], "rollers": [], "fixed_dofs": []}}}"#;
    let e = parse_scenario(text).unwrap_err();
    assert_eq!(e.paths(), ["truss.topology"]);
}

fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    lo..hi
}

fn scenario() -> impl Strategy<Value = Scenario> {
    (
        (finite(0.5, 2.0), any::<bool>(), finite(0.01, 0.3), finite(0.0, 1.0), finite(0.05, 0.95), finite(0.0, 0.01)),
        (prop::collection::vec(prop::collection::vec(finite(-1.0, 1.0), 2), 0..5), any::<bool>(), 1usize..100, any::<bool>()),
        (prop::option::of(prop::collection::vec(finite(0.0, 2.0), 6)), prop::collection::vec((0usize..6, finite(0.0, 10.0), any::<bool>()), 0..3)),
        (finite(0.0, 1e-3), any::<u64>(), prop::option::of(1usize..9), 3usize..100, any::<bool>(), prop::option::of("[a-z./]{1,12}")),
    )
        .prop_map(|(c, p, pl, misc)| {
            let mut s = Scenario { name: "prop".into(), ..Scenario::default() };
            s.truss = TrussSpec::DefaultTriforce { side: c.0 };
            s.control.mode = if c.1 { Mode::ClosedLoop } else { Mode::OpenLoop };
            s.control.speed_limit = c.2;
            s.control.k_f = c.3;
            s.control.barrier = BarrierSection { enabled: c.1, alpha: c.4, sigma_min: c.5 };
            s.path.waypoints = p.0;
            s.path.relative_to_home = p.1;
            s.path.waypoint_budget = p.2;
            s.path.timed = p.3;
            s.plant.gains = pl.0;
            s.plant.failures = pl.1.into_iter().map(|(roller, time, failed)| FailureSpec { roller, time, failed }).collect();
            s.plant.encoder_noise_std = misc.0;
            s.plant.seed = misc.1;
            s.estimator.filter = misc.2.map_or(FilterSpec::None, |window| FilterSpec::Sliding { window });
            s.analysis.rays = misc.3;
            s.analysis.mode = if misc.4 { SweepMode::Hard } else { SweepMode::Dtcbf };
            s.output = misc.5;
            s
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn print_then_parse_is_identity(s in scenario()) {
        let back = parse_scenario(&s.print()).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.sha256(), s.sha256());
    }
}
