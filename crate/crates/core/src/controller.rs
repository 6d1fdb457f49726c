//! Per-step velocity program: drive the target vertex toward its goal while
//! honouring the fixed, loop-closure and broken-roller equalities and, when
//! enabled, the discrete-time rigidity barrier.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::barrier::{BarrierParams, DtcbfConstraint};
use crate::error::{Error, Result};
use crate::estimator::{integrate, EncoderFrame, EstimatorState, VelocityFilter};
use crate::model::{Configuration, FamilyResiduals, MotionRequest, Truss};
use crate::sqp::{self, QuadraticObjective, SqpOptions};

pub use crate::sqp::SolveStatus;

/// Residual bound for an accepted step.
pub const ACCEPT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    OpenLoop,
    ClosedLoop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSpec {
    pub target_vertex: usize,
    pub goal: DVector<f64>,
    /// Saturation of the commanded target speed (m/s).
    pub speed_limit: f64,
    /// Weight of the formation-preservation term.
    pub k_f: f64,
    /// Rollers the controller knows to be broken.
    pub broken_rollers: BTreeSet<usize>,
    /// Barrier parameters; `barrier.dt` is the control period and
    /// `barrier.substeps` the Euler substep count of every state update.
    pub barrier: BarrierParams,
    pub barrier_enabled: bool,
    pub mode: ControlMode,
    pub failure_aware: bool,
}

impl ControlSpec {
    pub fn new(target_vertex: usize, goal: DVector<f64>) -> Self {
        Self {
            target_vertex,
            goal,
            speed_limit: 0.1,
            k_f: 0.1,
            broken_rollers: BTreeSet::new(),
            barrier: BarrierParams::default(),
            barrier_enabled: true,
            mode: ControlMode::OpenLoop,
            failure_aware: true,
        }
    }

    pub fn dt(&self) -> f64 {
        self.barrier.dt
    }

    pub fn validate(&self, truss: &Truss) -> Result<()> {
        let topo = truss.topology();
        topo.check_vertex(self.target_vertex)?;
        if topo.fully_fixed_vertices().contains(&self.target_vertex) {
            return Err(Error::InvalidParameter(format!(
                "target vertex {} is fully fixed",
                self.target_vertex
            )));
        }
        if self.goal.len() != topo.dimension || self.goal.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("goal must be a finite point".into()));
        }
        if !(self.speed_limit > 0.0) {
            return Err(Error::InvalidParameter("speed_limit must be positive".into()));
        }
        if !self.k_f.is_finite() {
            return Err(Error::InvalidParameter("k_f must be finite".into()));
        }
        for &r in &self.broken_rollers {
            topo.check_roller(r)?;
        }
        self.barrier.validate()
    }

    /// Rollers whose rows enter the program.
    pub fn constrained_rollers(&self) -> Vec<usize> {
        if self.failure_aware {
            self.broken_rollers.iter().copied().collect()
        } else {
            Vec::new()
        }
    }
}

/// Equality residuals per family plus the barrier residual `g(ẋ)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConstraintResiduals {
    pub families: FamilyResiduals,
    pub barrier: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub xdot: DVector<f64>,
    pub ddot: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    /// Wall time of the solve (s); zero when no clock is attached.
    pub solve_time: f64,
    pub iterations: usize,
    pub residuals: ConstraintResiduals,
}

impl SolveResult {
    /// Whether the step may be executed: a solution that meets every
    /// equality and the barrier within [`ACCEPT_TOLERANCE`].
    pub fn is_accepted(&self) -> bool {
        self.status != SolveStatus::Infeasible
            && self.residuals.families.max() <= ACCEPT_TOLERANCE
            && self.residuals.barrier.is_none_or(|g| g >= -ACCEPT_TOLERANCE)
    }
}

/// `‖R ẋ‖² + k_f ΔLᵀ R ẋ`.
pub fn objective(
    truss: &Truss,
    x: &Configuration,
    xdot: &DVector<f64>,
    nominal: &DVector<f64>,
    k_f: f64,
) -> Result<f64> {
    let r = truss.rigidity_matrix(x)?;
    let rates = &r * xdot;
    let deviation = truss.edge_lengths(x)? - nominal;
    Ok(rates.norm_squared() + k_f * deviation.dot(&rates))
}

/// Target velocity from the positional error: `e / dt`, saturated at the
/// speed limit.
pub fn build_b_move(truss: &Truss, x: &Configuration, spec: &ControlSpec) -> DVector<f64> {
    let current = truss.vertex_position(x, spec.target_vertex);
    let error = &spec.goal - current;
    let dt = spec.dt();
    let norm = error.norm();
    if norm / dt <= spec.speed_limit {
        error / dt
    } else {
        error * (spec.speed_limit / norm)
    }
}

/// Solves the program at `x` for a given target velocity.
pub fn solve_velocity(
    truss: &Truss,
    x: &Configuration,
    spec: &ControlSpec,
    b_move: &DVector<f64>,
    nominal: &DVector<f64>,
    warm_start: Option<&DVector<f64>>,
) -> Result<SolveResult> {
    let broken = spec.constrained_rollers();
    let rows = truss.constraint_rows(
        x,
        MotionRequest {
            target_vertex: spec.target_vertex,
            velocity: b_move,
            broken: &broken,
        },
    )?;
    let (a, b) = rows.stacked();
    let r = truss.rigidity_matrix(x)?;
    let deviation = truss.edge_lengths(x)? - nominal;
    let quad = QuadraticObjective {
        hessian: r.tr_mul(&r) * 2.0,
        linear: r.tr_mul(&deviation) * spec.k_f,
    };

    let barrier = if spec.barrier_enabled {
        Some(DtcbfConstraint::new(truss, x, spec.barrier)?)
    } else {
        None
    };
    let options = SqpOptions::default();
    let solution = match &barrier {
        Some(c) => sqp::solve(&quad, &a, &b, Some(|v: &DVector<f64>| c.residual(v)), warm_start, &options),
        None => sqp::solve(&quad, &a, &b, None::<fn(&DVector<f64>) -> f64>, warm_start, &options),
    };

    let xdot = solution.x;
    let mut ddot = truss.roller_rates(&r, &xdot);
    for &i in &broken {
        ddot[i] = 0.0;
    }
    let rates = &r * &xdot;
    Ok(SolveResult {
        objective: rates.norm_squared() + spec.k_f * deviation.dot(&rates),
        residuals: ConstraintResiduals {
            families: rows.residuals(&xdot),
            barrier: solution.inequality,
        },
        xdot,
        ddot,
        status: solution.status,
        solve_time: 0.0,
        iterations: solution.iterations,
    })
}

/// One control step at `x`: build `b_move` from the goal and solve.
pub fn solve_step(
    truss: &Truss,
    x: &Configuration,
    spec: &ControlSpec,
    nominal: &DVector<f64>,
    warm_start: Option<&DVector<f64>>,
) -> Result<SolveResult> {
    let b_move = build_b_move(truss, x, spec);
    solve_velocity(truss, x, spec, &b_move, nominal, warm_start)
}

/// Source of wall-clock seconds for solve timing.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Clock that always reads zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// Flags rollers whose encoders do not follow nonzero commands.
///
/// A roller is flagged once its measured displacement stays below
/// `ratio` of the commanded displacement for `consecutive` steps in a row.
#[derive(Debug, Clone)]
pub struct FailureDetector {
    pub ratio: f64,
    pub consecutive: usize,
    misses: Vec<usize>,
    flagged: BTreeSet<usize>,
}

impl FailureDetector {
    pub fn new(rollers: usize) -> Self {
        Self {
            ratio: 0.01,
            consecutive: 2,
            misses: alloc::vec![0; rollers],
            flagged: BTreeSet::new(),
        }
    }

    /// Returns rollers newly flagged by this observation.
    pub fn observe(&mut self, commanded: &DVector<f64>, measured: &DVector<f64>) -> Vec<usize> {
        let mut newly = Vec::new();
        for i in 0..self.misses.len() {
            let cmd = commanded[i].abs();
            if cmd <= 1e-12 {
                continue;
            }
            if measured[i].abs() < self.ratio * cmd {
                self.misses[i] += 1;
            } else {
                self.misses[i] = 0;
            }
            if self.misses[i] >= self.consecutive && self.flagged.insert(i) {
                newly.push(i);
            }
        }
        newly
    }

    pub fn flagged(&self) -> &BTreeSet<usize> {
        &self.flagged
    }
}

/// Controller state for one robot: the configuration estimate it plans
/// from, the nominal edge lengths, and the warm start.
#[derive(Debug, Clone)]
pub struct Controller<'a> {
    truss: &'a Truss,
    pub spec: ControlSpec,
    nominal: DVector<f64>,
    x_est: Configuration,
    last_xdot: Option<DVector<f64>>,
    estimator: Option<EstimatorState>,
}

impl<'a> Controller<'a> {
    /// `x0` also fixes the nominal edge lengths `L_0`.
    pub fn new(truss: &'a Truss, spec: ControlSpec, x0: Configuration) -> Result<Self> {
        spec.validate(truss)?;
        let nominal = truss.edge_lengths(&x0)?;
        Ok(Self {
            truss,
            spec,
            nominal,
            x_est: x0,
            last_xdot: None,
            estimator: None,
        })
    }

    pub fn with_nominal(mut self, nominal: DVector<f64>) -> Self {
        self.nominal = nominal;
        self
    }

    /// Starts encoder-driven estimation from `first` (closed loop).
    pub fn attach_encoders(&mut self, first: EncoderFrame, filter: VelocityFilter) {
        self.estimator = Some(EstimatorState::new(
            self.x_est.clone(),
            first,
            filter,
            self.spec.barrier.substeps,
        ));
    }

    pub fn estimate(&self) -> &Configuration {
        &self.x_est
    }

    pub fn nominal(&self) -> &DVector<f64> {
        &self.nominal
    }

    pub fn truss(&self) -> &'a Truss {
        self.truss
    }

    /// Solves at the current estimate and returns the command. Commands of
    /// rejected solves are replaced by zero roller velocity.
    pub fn command(&mut self, clock: &dyn Clock) -> Result<SolveResult> {
        let start = clock.seconds();
        let mut result = solve_step(
            self.truss,
            &self.x_est,
            &self.spec,
            &self.nominal,
            self.last_xdot.as_ref(),
        )?;
        result.solve_time = clock.seconds() - start;
        if result.is_accepted() {
            self.last_xdot = Some(result.xdot.clone());
        } else {
            result.ddot.fill(0.0);
            self.last_xdot = None;
        }
        Ok(result)
    }

    /// Open-loop propagation: integrate the commanded roller velocities.
    pub fn propagate(&mut self, ddot_cmd: &DVector<f64>) -> Result<()> {
        match integrate(
            self.truss,
            &self.x_est,
            ddot_cmd,
            self.spec.dt(),
            self.spec.barrier.substeps,
        ) {
            Ok(x) => {
                self.x_est = x;
                Ok(())
            }
            Err(aborted) => {
                self.x_est = aborted.last_good;
                Err(aborted.error)
            }
        }
    }

    /// Closed-loop correction from an encoder frame; returns the roller
    /// velocity estimate.
    pub fn observe(&mut self, frame: EncoderFrame) -> Result<DVector<f64>> {
        let est = self
            .estimator
            .as_mut()
            .ok_or_else(|| Error::InvalidParameter("closed loop needs encoders attached".into()))?;
        let result = est.update(self.truss, frame);
        self.x_est = est.x_est.clone();
        result
    }

    /// Solve, then advance the internal estimate with the command.
    pub fn step_open_loop(&mut self, clock: &dyn Clock) -> Result<SolveResult> {
        let result = self.command(clock)?;
        self.propagate(&result.ddot)?;
        Ok(result)
    }

    /// Correct the estimate from `frame`, then solve.
    pub fn step_closed_loop(&mut self, frame: EncoderFrame, clock: &dyn Clock) -> Result<SolveResult> {
        self.observe(frame)?;
        self.command(clock)
    }
}
