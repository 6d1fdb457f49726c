//! Offline analyses: manipulability under failures, radial workspace
//! sweeps, greedy failure ordering, and trajectory error metrics.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::barrier::sigma_crit;
use crate::controller::{solve_velocity, ControlSpec};
use crate::error::{Error, Result};
use crate::estimator::{forward_jacobian, integrate, integrate_observed};
use crate::model::{Configuration, Truss};

/// Rows of the forward Jacobian belonging to `vertex`, with the columns of
/// failed rollers zeroed.
pub fn target_jacobian(
    truss: &Truss,
    x: &Configuration,
    vertex: usize,
    failures: &BTreeSet<usize>,
) -> Result<DMatrix<f64>> {
    truss.topology().check_vertex(vertex)?;
    for &r in failures {
        truss.topology().check_roller(r)?;
    }
    let d = truss.dimension();
    let mut jt = forward_jacobian(truss, x)?.rows(vertex * d, d).into_owned();
    for &r in failures {
        jt.column_mut(r).fill(0.0);
    }
    Ok(jt)
}

/// `√det(J Jᵀ)`.
pub fn manipulability_index(jt: &DMatrix<f64>) -> f64 {
    libm::sqrt((jt * jt.transpose()).determinant().max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipse {
    /// Semi-axis lengths, descending.
    pub semi_axes: Vec<f64>,
    /// Angle of the major axis from the x axis (rad), planar case only.
    pub orientation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManipReport {
    pub m: f64,
    pub condition_number: f64,
    pub ellipse: Ellipse,
    /// `M` with each roller's column zeroed in turn.
    pub per_roller_degraded: DVector<f64>,
}

/// Report for an explicit target Jacobian.
pub fn manip_report(jt: &DMatrix<f64>) -> ManipReport {
    let svd = jt.clone().svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let semi_axes: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let (max, min) = (semi_axes[0], semi_axes[semi_axes.len() - 1]);
    let condition_number = if min > 0.0 { max / min } else { f64::INFINITY };
    let orientation = match &svd.u {
        Some(u) if u.nrows() == 2 => libm::atan2(u[(1, order[0])], u[(0, order[0])]),
        _ => 0.0,
    };
    let per_roller_degraded = DVector::from_fn(jt.ncols(), |i, _| {
        let mut degraded = jt.clone();
        degraded.column_mut(i).fill(0.0);
        manipulability_index(&degraded)
    });
    ManipReport {
        m: manipulability_index(jt),
        condition_number,
        ellipse: Ellipse { semi_axes, orientation },
        per_roller_degraded,
    }
}

pub fn manipulability(
    truss: &Truss,
    x: &Configuration,
    vertex: usize,
    failures: &BTreeSet<usize>,
) -> Result<ManipReport> {
    Ok(manip_report(&target_jacobian(truss, x, vertex, failures)?))
}

/// Degraded manipulability along a trajectory as a fraction of the largest
/// nominal value on that trajectory; one row per pose, one column per roller.
pub fn retention_curves(reports: &[ManipReport]) -> Vec<DVector<f64>> {
    let peak = reports.iter().map(|r| r.m).fold(0.0, f64::max);
    reports
        .iter()
        .map(|r| {
            if peak > 0.0 {
                &r.per_roller_degraded / peak
            } else {
                r.per_roller_degraded.clone()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkspaceMode {
    /// Barrier constraint inside the program.
    Dtcbf,
    /// No barrier in the program; stop before the next step's path would
    /// fall below `σ_min`.
    HardThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkspaceOptions {
    pub n_rays: usize,
    /// Radial advance per control step (m).
    pub radial_step: f64,
    pub max_radius: f64,
    pub mode: WorkspaceMode,
}

impl Default for WorkspaceOptions {
    fn default() -> Self {
        Self {
            n_rays: 72,
            radial_step: 0.01,
            max_radius: 4.0,
            mode: WorkspaceMode::Dtcbf,
        }
    }
}

impl WorkspaceOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_rays < 3 {
            return Err(Error::InvalidParameter("n_rays must be >= 3".into()));
        }
        if !(self.radial_step > 0.0) || !(self.max_radius > 0.0) {
            return Err(Error::InvalidParameter("radial_step and max_radius must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkspacePolygon {
    /// `(angle, extension)` pairs sorted by angle.
    pub rays: Vec<(f64, f64)>,
    pub ends: Vec<RayEnd>,
    pub area: f64,
    pub failure_set: BTreeSet<usize>,
}

/// `½∮ r² dθ` by the trapezoidal rule over the closed angle sequence.
pub fn polar_area(rays: &[(f64, f64)]) -> f64 {
    let n = rays.len();
    if n < 2 {
        return 0.0;
    }
    let mut area = 0.0;
    for i in 0..n {
        let (t0, r0) = rays[i];
        let (mut t1, r1) = rays[(i + 1) % n];
        if i + 1 == n {
            t1 += 2.0 * PI;
        }
        area += 0.25 * (r0 * r0 + r1 * r1) * (t1 - t0);
    }
    area
}

/// Why a ray stopped extending.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RayEnd {
    MaxRadius,
    /// The program had no acceptable solution.
    Infeasible,
    /// The step would cross a singular pose.
    Singular,
    /// The step would take `σ_crit` below `σ_min` (hard threshold mode).
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayResult {
    pub angle: f64,
    pub radius: f64,
    pub end: RayEnd,
    /// Barrier value at the last reached pose.
    pub h: f64,
}

/// Moves the target vertex from `home` along `angle` one radial step per
/// control step and reports the last radius reached.
pub fn extend_ray(
    truss: &Truss,
    home: &Configuration,
    spec: &ControlSpec,
    angle: f64,
    options: &WorkspaceOptions,
) -> Result<RayResult> {
    let d = truss.dimension();
    if d != 2 {
        return Err(Error::InvalidParameter("workspace rays need a planar truss".into()));
    }
    let mut spec = spec.clone();
    spec.failure_aware = true;
    spec.barrier_enabled = options.mode == WorkspaceMode::Dtcbf;
    let nominal = truss.edge_lengths(home)?;
    let origin = truss.vertex_position(home, spec.target_vertex);
    let dir = DVector::from_row_slice(&[libm::cos(angle), libm::sin(angle)]);
    let dt = spec.dt();
    let substeps = spec.barrier.substeps;
    let steps = libm::floor(options.max_radius / options.radial_step + 1e-9) as usize;

    let mut x = home.clone();
    let mut warm: Option<DVector<f64>> = None;
    let mut reached = 0.0;
    let mut end = RayEnd::MaxRadius;
    for j in 1..=steps {
        let radius = j as f64 * options.radial_step;
        let waypoint = &origin + &dir * radius;
        let b_move = (waypoint - truss.vertex_position(&x, spec.target_vertex)) / dt;
        let result = match solve_velocity(truss, &x, &spec, &b_move, &nominal, warm.as_ref()) {
            Ok(r) if r.is_accepted() => r,
            _ => {
                end = RayEnd::Infeasible;
                break;
            }
        };
        let mut lowest = f64::INFINITY;
        let next = if options.mode == WorkspaceMode::HardThreshold {
            integrate_observed(truss, &x, &result.ddot, dt, substeps, |s| {
                lowest = lowest.min(sigma_crit(truss, s)?);
                Ok(())
            })
        } else {
            integrate(truss, &x, &result.ddot, dt, substeps)
        };
        let Ok(next) = next else {
            end = RayEnd::Singular;
            break;
        };
        if options.mode == WorkspaceMode::HardThreshold && !(lowest >= spec.barrier.sigma_min) {
            end = RayEnd::Threshold;
            break;
        }
        x = next;
        warm = Some(result.xdot);
        reached = radius;
    }
    Ok(RayResult {
        angle,
        radius: reached,
        end,
        h: sigma_crit(truss, &x)? - spec.barrier.sigma_min,
    })
}

/// Radial sweep over `n_rays` uniform directions, each restarting at home.
pub fn workspace(
    truss: &Truss,
    home: &Configuration,
    spec: &ControlSpec,
    failures: &BTreeSet<usize>,
    options: &WorkspaceOptions,
) -> Result<WorkspacePolygon> {
    options.validate()?;
    let mut spec = spec.clone();
    spec.broken_rollers = failures.clone();
    spec.validate(truss)?;
    let mut results = Vec::with_capacity(options.n_rays);
    for i in 0..options.n_rays {
        let angle = 2.0 * PI * i as f64 / options.n_rays as f64;
        results.push(extend_ray(truss, home, &spec, angle, options)?);
    }
    let rays: Vec<_> = results.iter().map(|r| (r.angle, r.radius)).collect();
    Ok(WorkspacePolygon {
        area: polar_area(&rays),
        rays,
        ends: results.iter().map(|r| r.end).collect(),
        failure_set: failures.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOrder {
    pub order: Vec<usize>,
    /// Area after each cumulative failure; the first entry is nominal.
    pub cumulative_areas: Vec<f64>,
    /// Polygons of the first greedy stage, one per roller.
    pub single_failures: Vec<WorkspacePolygon>,
}

/// Repeatedly fails the roller whose loss keeps the most workspace; ties go
/// to the lowest index.
pub fn greedy_failure_order(
    truss: &Truss,
    home: &Configuration,
    spec: &ControlSpec,
    options: &WorkspaceOptions,
) -> Result<GreedyOrder> {
    let nominal = workspace(truss, home, spec, &BTreeSet::new(), options)?;
    greedy_from(truss, home, spec, options, nominal.area, None, truss.roller_count())
}

/// Greedy ordering reusing an already computed nominal area and, when
/// given, the single-failure polygons; stops after `depth` failures.
pub fn greedy_from(
    truss: &Truss,
    home: &Configuration,
    spec: &ControlSpec,
    options: &WorkspaceOptions,
    nominal_area: f64,
    singles: Option<Vec<WorkspacePolygon>>,
    depth: usize,
) -> Result<GreedyOrder> {
    let n = truss.roller_count();
    let depth = depth.min(n);
    let mut failed = BTreeSet::new();
    let mut order = Vec::new();
    let mut areas = alloc::vec![nominal_area];
    let mut single_failures = Vec::new();
    let mut singles = singles;
    while order.len() < depth {
        let mut best: Option<(usize, f64)> = None;
        for r in (0..n).filter(|r| !failed.contains(r)) {
            let area = match (order.is_empty(), singles.as_ref()) {
                (true, Some(s)) => s[r].area,
                _ => {
                    let mut set = failed.clone();
                    set.insert(r);
                    let poly = workspace(truss, home, spec, &set, options)?;
                    let area = poly.area;
                    if order.is_empty() {
                        single_failures.push(poly);
                    }
                    area
                }
            };
            if best.is_none_or(|(_, a)| area > a) {
                best = Some((r, area));
            }
        }
        if order.is_empty() {
            if let Some(s) = singles.take() {
                single_failures = s;
            }
        }
        let (r, area) = best.expect("at least one roller remains");
        failed.insert(r);
        order.push(r);
        areas.push(area);
    }
    Ok(GreedyOrder { order, cumulative_areas: areas, single_failures })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtcbfComparison {
    pub dtcbf: WorkspacePolygon,
    pub hard: WorkspacePolygon,
    pub ratio: f64,
}

pub fn dtcbf_workspace_comparison(
    truss: &Truss,
    home: &Configuration,
    spec: &ControlSpec,
    options: &WorkspaceOptions,
) -> Result<DtcbfComparison> {
    let none = BTreeSet::new();
    let dtcbf = workspace(truss, home, spec, &none, &WorkspaceOptions { mode: WorkspaceMode::Dtcbf, ..*options })?;
    let hard = workspace(truss, home, spec, &none, &WorkspaceOptions { mode: WorkspaceMode::HardThreshold, ..*options })?;
    let ratio = if hard.area > 0.0 { dtcbf.area / hard.area } else { f64::INFINITY };
    Ok(DtcbfComparison { dtcbf, hard, ratio })
}

/// A time-stamped path of one point.
pub type Trace = [(f64, DVector<f64>)];

fn sample(trace: &Trace, t: f64) -> DVector<f64> {
    let i = trace.partition_point(|(ti, _)| *ti <= t);
    if i == 0 {
        return trace[0].1.clone();
    }
    if i == trace.len() {
        return trace[trace.len() - 1].1.clone();
    }
    let (t0, p0) = &trace[i - 1];
    let (t1, p1) = &trace[i];
    if t1 <= t0 {
        return p1.clone();
    }
    let w = (t - t0) / (t1 - t0);
    p0 * (1.0 - w) + p1 * w
}

/// Root mean square position error between two traces on the union of
/// their timestamps; each trace is linearly interpolated and held constant
/// beyond its ends.
pub fn rmse(actual: &Trace, reference: &Trace) -> Result<f64> {
    if actual.is_empty() || reference.is_empty() {
        return Err(Error::EmptyTrace);
    }
    for trace in [actual, reference] {
        if trace.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::NonmonotonicTime);
        }
    }
    let mut times: Vec<f64> = actual.iter().chain(reference.iter()).map(|(t, _)| *t).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let sum: f64 = times
        .iter()
        .map(|&t| (sample(actual, t) - sample(reference, t)).norm_squared())
        .sum();
    Ok(libm::sqrt(sum / times.len() as f64))
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::EmptyTrace);
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(rb.iter()) {
        cov += (x - mean) * (y - mean);
        va += (x - mean) * (x - mean);
        vb += (y - mean) * (y - mean);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / libm::sqrt(va * vb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{default_triforce, TRIFORCE_APEX};
    use approx::assert_relative_eq;

    fn pt(x: f64, y: f64) -> DVector<f64> {
        DVector::from_row_slice(&[x, y])
    }

    #[test]
    fn identity_jacobian() {
        let r = manip_report(&DMatrix::identity(2, 2));
        assert_relative_eq!(r.m, 1.0, epsilon = 1e-15);
        assert_relative_eq!(r.condition_number, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zeroing_a_column() {
        let jt = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let r = manip_report(&jt);
        assert_relative_eq!(r.m, 2f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(r.per_roller_degraded[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(r.per_roller_degraded[1], 0.0, epsilon = 1e-14);
        assert_relative_eq!(r.ellipse.semi_axes[0], 2f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(r.ellipse.orientation.abs() % PI, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn failure_set_zeroes_columns() {
        let (topo, x) = default_triforce(1.0);
        let truss = Truss::new(topo).unwrap();
        let full = manipulability(&truss, &x, TRIFORCE_APEX, &BTreeSet::new()).unwrap();
        let one: BTreeSet<_> = [2].into();
        let deg = manipulability(&truss, &x, TRIFORCE_APEX, &one).unwrap();
        assert_relative_eq!(deg.m, full.per_roller_degraded[2], epsilon = 1e-14);
        assert!(full.per_roller_degraded.iter().all(|&m| m <= full.m + 1e-15));
        assert!(full.condition_number >= 1.0);
    }

    #[test]
    fn polar_area_of_circle() {
        let n = 720;
        let rays: Vec<_> = (0..n).map(|i| (2.0 * PI * i as f64 / n as f64, 0.5)).collect();
        assert_relative_eq!(polar_area(&rays), PI * 0.25, epsilon = 1e-12);
    }

    #[test]
    fn rmse_examples() {
        let a = [(0.0, pt(0.0, 0.0)), (1.0, pt(1.0, 0.0)), (2.0, pt(1.0, 1.0))];
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b: Vec<_> = a.iter().map(|(t, p)| (*t, p + pt(0.03, 0.04))).collect();
        assert_relative_eq!(rmse(&b, &a).unwrap(), 0.05, epsilon = 1e-15);
        let c = [(0.5, pt(0.0, 0.0)), (1.5, pt(2.0, 0.0))];
        assert_eq!(rmse(&a, &c).unwrap(), rmse(&c, &a).unwrap());
        assert!(matches!(rmse(&[], &a), Err(Error::EmptyTrace)));
    }

    #[test]
    fn spearman_examples() {
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]).unwrap(), 1.0);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), [2.5, 1.0, 2.5]);
    }
}
