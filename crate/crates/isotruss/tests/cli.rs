use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_isotruss"))
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const QUICK_SWEEP: &str = r#"{"analysis": {"rays": 8, "radial_step": 0.05, "max_radius": 2.0}}"#;

#[test]
fn run_then_compare_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("nominal.jsonl");
    ok(bin().arg("run").arg(scenario_path("square_nominal.json")).arg("--out").arg(&log).output().unwrap());
    let table = ok(bin().arg("compare").arg(&log).arg(&log).output().unwrap());
    assert!(table.lines().nth(1).unwrap().trim_end().ends_with("0.000000"), "{table}");
    let row = ok(bin().arg("compare").arg(&log).arg(&log).arg("--ref").arg(&log).arg("--csv").output().unwrap());
    let last: Vec<&str> = row.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&last[2..5], ["0.000000", "0.000000", "0.000000"]);
}

#[test]
fn compare_reports_closed_loop_gain() {
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for name in ["square_nominal", "table1_slow6_ol", "table1_slow6_cl"] {
        let log = dir.path().join(format!("{name}.jsonl"));
        ok(bin().arg("run").arg(scenario_path(&format!("{name}.json"))).arg("--out").arg(&log).output().unwrap());
        logs.push(log);
    }
    let row = ok(bin()
        .args(["compare", "--csv", "--no-header"])
        .arg(&logs[1])
        .arg(&logs[2])
        .arg("--ref")
        .arg(&logs[0])
        .output()
        .unwrap());
    let f: Vec<&str> = row.trim().split(',').collect();
    let (ol, cl): (f64, f64) = (f[3].parse().unwrap(), f[4].parse().unwrap());
    assert!(cl < ol, "{row}");
    let gain: f64 = f[5].parse().unwrap();
    assert!((gain - 100.0 * (ol - cl) / ol).abs() < 0.01);
}

#[test]
fn workspace_dtcbf_area_at_least_hard_area() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "quick.json", QUICK_SWEEP);
    let mut areas = Vec::new();
    for mode in ["dtcbf", "hard"] {
        let prefix = dir.path().join(mode);
        ok(bin().arg("workspace").arg(&s).args(["--mode", mode, "--out"]).arg(&prefix).output().unwrap());
        let csv = std::fs::read_to_string(prefix.with_extension("csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "angle,radius,end,x,y");
        assert_eq!(csv.lines().count(), 9);
        let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(prefix.with_extension("json")).unwrap()).unwrap();
        assert_eq!(summary["mode"], mode);
        areas.push(summary["area"].as_f64().unwrap());
    }
    assert!(areas[0] >= areas[1], "{areas:?}");
}

#[test]
fn workspace_with_failures_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "quick.json", QUICK_SWEEP);
    let out = bin().arg("workspace").arg(&s).args(["--failures", "0,3", "--rays", "6"]).output().unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    let csv = ok(out);
    assert_eq!(csv.lines().count(), 7);
    let summary: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(summary["failures"], serde_json::json!([0, 3]));
}

#[test]
fn manip_emits_one_row_per_step() {
    let csv = ok(bin().arg("manip").arg(scenario_path("square_nominal.json")).output().unwrap());
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[4], "m");
    assert_eq!(header.len(), 9 + 12);
    assert_eq!(lines.count(), 50);
}

#[test]
fn greedy_lists_every_roller() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "tiny.json", r#"{"analysis": {"rays": 4, "radial_step": 0.1, "max_radius": 1.0}}"#);
    let out: serde_json::Value = serde_json::from_str(&ok(bin().arg("greedy").arg(&s).output().unwrap())).unwrap();
    let mut order: Vec<u64> = out["order"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(out["cumulative_areas"].as_array().unwrap().len(), 7);
    order.sort();
    assert_eq!(order, [0, 1, 2, 3, 4, 5]);
}

#[test]
fn invalid_scenario_exits_nonzero_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "bad.json", r#"{"plant": {"failures": [{"roller": 2, "time": -1.0}]}}"#);
    let out = bin().arg("run").arg(&s).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("plant.failures[0].time"));
    let out = bin().arg("run").arg(dir.path().join("missing.json")).output().unwrap();
    assert!(!out.status.success());
}
