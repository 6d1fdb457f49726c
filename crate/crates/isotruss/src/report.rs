//! Tabular output of the offline analyses.

use std::collections::BTreeSet;
use std::io::Write;

use isotruss_core::analysis::{manipulability, rmse, RayEnd, WorkspacePolygon};
use isotruss_core::{Configuration, Truss};
use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::runlog::RunLog;

#[derive(Debug, Clone, Serialize)]
pub struct RayRow {
    pub angle: f64,
    pub radius: f64,
    pub end: &'static str,
    pub x: f64,
    pub y: f64,
}

pub fn end_name(end: RayEnd) -> &'static str {
    match end {
        RayEnd::MaxRadius => "max_radius",
        RayEnd::Infeasible => "infeasible",
        RayEnd::Singular => "singular",
        RayEnd::Threshold => "threshold",
    }
}

/// One row per ray; `x, y` is the ray's end point.
pub fn ray_rows(polygon: &WorkspacePolygon, origin: &DVector<f64>) -> Vec<RayRow> {
    polygon
        .rays
        .iter()
        .zip(&polygon.ends)
        .map(|(&(angle, radius), &end)| RayRow {
            angle,
            radius,
            end: end_name(end),
            x: origin[0] + radius * angle.cos(),
            y: origin[1] + radius * angle.sin(),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct WorkspaceSummary {
    pub mode: String,
    pub failures: Vec<usize>,
    pub rays: usize,
    pub area: f64,
}

/// Per-step manipulability of the target vertex along a logged run.
pub fn manip_table(truss: &Truss, log: &RunLog) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let n = truss.roller_count();
    let mut header: Vec<String> = ["k", "time", "x", "y", "m", "condition_number", "axis_major", "axis_minor", "orientation"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..n).map(|i| format!("degraded_{i}")));
    header.extend((0..n).map(|i| format!("retention_{i}")));
    let v = log.header.target_vertex;
    let d = log.header.dimension;
    let mut reports = Vec::with_capacity(log.records.len());
    for r in &log.records {
        let x = Configuration::new(DVector::from_column_slice(&r.x_true), r.time);
        reports.push(manipulability(truss, &x, v, &BTreeSet::new())?);
    }
    let curves = isotruss_core::analysis::retention_curves(&reports);
    let rows = log
        .records
        .iter()
        .zip(reports.iter().zip(curves))
        .map(|(r, (m, retention))| {
            let p = r.target(true, v, d);
            let axes = &m.ellipse.semi_axes;
            let mut row = vec![
                r.k as f64,
                r.time,
                p[0],
                p[1],
                m.m,
                m.condition_number,
                axes[0],
                axes[axes.len() - 1],
                m.ellipse.orientation,
            ];
            row.extend(m.per_roller_degraded.iter());
            row.extend(retention.iter());
            row
        })
        .collect();
    Ok((header, rows))
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub reference: Option<String>,
    pub rmse_a_b: f64,
    pub rmse_a_ref: Option<f64>,
    pub rmse_b_ref: Option<f64>,
    /// `(rmse_a_ref - rmse_b_ref) / rmse_a_ref`, in percent.
    pub improvement_pct: Option<f64>,
}

fn check_compatible(a: &RunLog, b: &RunLog) -> Result<()> {
    if a.header.dimension != b.header.dimension || a.header.target_vertex != b.header.target_vertex {
        return Err(Error::RunLog("logs track different target vertices".into()));
    }
    Ok(())
}

/// Ground-truth target RMSE between two logs and, with a reference, of each
/// log against it.
pub fn compare(a: (&str, &RunLog), b: (&str, &RunLog), reference: Option<(&str, &RunLog)>) -> Result<Comparison> {
    check_compatible(a.1, b.1)?;
    let (ta, tb) = (a.1.target_trace(true), b.1.target_trace(true));
    let mut out = Comparison {
        a: a.0.into(),
        b: b.0.into(),
        reference: None,
        rmse_a_b: rmse(&ta, &tb)?,
        rmse_a_ref: None,
        rmse_b_ref: None,
        improvement_pct: None,
    };
    if let Some((name, log)) = reference {
        check_compatible(a.1, log)?;
        let tr = log.target_trace(true);
        let (ea, eb) = (rmse(&ta, &tr)?, rmse(&tb, &tr)?);
        out.reference = Some(name.into());
        out.rmse_a_ref = Some(ea);
        out.rmse_b_ref = Some(eb);
        out.improvement_pct = (ea > 0.0).then(|| 100.0 * (ea - eb) / ea);
    }
    Ok(out)
}

pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| Error::Io { path: "<csv>".into(), source })
}

pub fn write_table<W: Write>(out: W, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|source| Error::Io { path: "<csv>".into(), source })
}
