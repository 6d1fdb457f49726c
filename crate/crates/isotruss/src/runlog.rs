//! Run logs as JSON lines: one header line, then one step record per line.

use std::io::{BufRead, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use isotruss_core::controller::SolveStatus;
use isotruss_core::sim::{SimOutcome, StepRecord};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;

pub const FORMAT: &str = "isotruss-runlog";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunHeader {
    pub format: String,
    pub version: u32,
    pub crate_version: String,
    pub scenario_name: String,
    pub scenario_sha256: String,
    /// Wall-clock creation time (ms since the Unix epoch).
    pub created_unix_ms: u64,
    pub dimension: usize,
    pub target_vertex: usize,
    pub dt: f64,
    pub home: Vec<f64>,
    pub home_time: f64,
    pub waypoints_reached: Vec<bool>,
    /// Error that ended the run early.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    MaxIterations,
    Infeasible,
}

impl From<SolveStatus> for Status {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Optimal => Status::Optimal,
            SolveStatus::MaxIterations => Status::MaxIterations,
            SolveStatus::Infeasible => Status::Infeasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub k: usize,
    pub time: f64,
    pub waypoint: usize,
    pub goal: Vec<f64>,
    pub x_est: Vec<f64>,
    pub x_true: Vec<f64>,
    pub d_cmd: Vec<f64>,
    pub d_real: Vec<f64>,
    pub h: f64,
    pub sigma_crit: f64,
    pub h_true: f64,
    pub solve_status: Status,
    pub accepted: bool,
    /// Seconds.
    pub solve_time: f64,
    pub iterations: usize,
    pub equality_residual: f64,
    pub barrier_residual: Option<f64>,
    pub broken_known: Vec<usize>,
}

fn vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

impl From<&StepRecord> for LogRecord {
    fn from(r: &StepRecord) -> Self {
        LogRecord {
            k: r.k,
            time: r.time,
            waypoint: r.waypoint,
            goal: vec(&r.goal),
            x_est: vec(&r.x_est),
            x_true: vec(&r.x_true),
            d_cmd: vec(&r.d_cmd),
            d_real: vec(&r.d_real),
            h: r.h,
            sigma_crit: r.sigma_crit,
            h_true: r.h_true,
            solve_status: r.solve_status.into(),
            accepted: r.accepted,
            solve_time: r.solve_time,
            iterations: r.iterations,
            equality_residual: r.equality_residual,
            barrier_residual: r.barrier_residual,
            broken_known: r.broken_known.clone(),
        }
    }
}

impl LogRecord {
    pub fn target(&self, truth: bool, vertex: usize, d: usize) -> DVector<f64> {
        let x = if truth { &self.x_true } else { &self.x_est };
        DVector::from_column_slice(&x[vertex * d..(vertex + 1) * d])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<LogRecord>,
}

pub fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl RunLog {
    pub fn from_outcome(scenario: &Scenario, target_vertex: usize, dimension: usize, dt: f64, outcome: &SimOutcome) -> Self {
        RunLog {
            header: RunHeader {
                format: FORMAT.into(),
                version: FORMAT_VERSION,
                crate_version: env!("CARGO_PKG_VERSION").into(),
                scenario_name: scenario.name.clone(),
                scenario_sha256: scenario.sha256(),
                created_unix_ms: unix_ms(),
                dimension,
                target_vertex,
                dt,
                home: vec(&outcome.home.positions),
                home_time: outcome.home.time,
                waypoints_reached: outcome.waypoints_reached.clone(),
                error: outcome.error.as_ref().map(|e| e.to_string()),
            },
            records: outcome.records.iter().map(LogRecord::from).collect(),
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n").map_err(io("<log>"))?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(io("<log>"))?;
        }
        out.flush().map_err(io("<log>"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let (_, first) = lines.next().ok_or_else(|| Error::RunLog("empty log".into()))?;
        let header: RunHeader = serde_json::from_str(&first.map_err(io("<log>"))?)?;
        if header.format != FORMAT || header.version != FORMAT_VERSION {
            return Err(Error::RunLog(format!("unsupported format {} v{}", header.format, header.version)));
        }
        let mut records: Vec<LogRecord> = Vec::new();
        for (n, line) in lines {
            let record: LogRecord = serde_json::from_str(&line.map_err(io("<log>"))?)
                .map_err(|e| Error::RunLog(format!("line {}: {e}", n + 1)))?;
            if let Some(prev) = records.last() {
                if record.k <= prev.k {
                    return Err(Error::RunLog(format!("line {}: step index {} not increasing", n + 1, record.k)));
                }
            }
            records.push(record);
        }
        Ok(RunLog { header, records })
    }

    pub fn load(path: &str) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(io(path))?;
        Self::read(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: &str) -> Result<()> {
        let file = std::fs::File::create(path).map_err(io(path))?;
        self.write(std::io::BufWriter::new(file))
    }

    /// Target-vertex positions over time, home pose first.
    pub fn target_trace(&self, truth: bool) -> Vec<(f64, DVector<f64>)> {
        let (v, d) = (self.header.target_vertex, self.header.dimension);
        let home = DVector::from_column_slice(&self.header.home[v * d..(v + 1) * d]);
        std::iter::once((self.header.home_time, home))
            .chain(self.records.iter().map(|r| (r.time, r.target(truth, v, d))))
            .collect()
    }

    pub fn min_h(&self) -> f64 {
        self.records.iter().map(|r| r.h).fold(f64::INFINITY, f64::min)
    }

    pub fn median_solve_time(&self) -> Option<f64> {
        let mut t: Vec<f64> = self.records.iter().map(|r| r.solve_time).collect();
        if t.is_empty() {
            return None;
        }
        t.sort_by(f64::total_cmp);
        let n = t.len();
        Some(if n % 2 == 1 { t[n / 2] } else { 0.5 * (t[n / 2 - 1] + t[n / 2]) })
    }
}

pub(crate) fn io(path: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_string(), source }
}
