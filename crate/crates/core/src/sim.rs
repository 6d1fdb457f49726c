//! Lock-step simulation of controller, plant and estimator along a list of
//! waypoints.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::barrier::barrier;
use crate::controller::{Clock, ControlMode, ControlSpec, Controller, FailureDetector, SolveStatus};
use crate::error::{Error, Result};
use crate::estimator::VelocityFilter;
use crate::model::{Configuration, Truss};
use crate::plant::{Plant, PlantConfig};

/// A change of a roller's health at a given time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureEvent {
    pub time: f64,
    pub roller: usize,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub waypoints: Vec<DVector<f64>>,
    pub goal_tolerance: f64,
    /// Steps spent on one waypoint before moving on regardless.
    pub waypoint_budget: usize,
    /// Hold every waypoint for exactly `waypoint_budget` steps, so runs share
    /// one time base.
    pub timed: bool,
    /// Hard cap on the run length; also the hold length when there are no
    /// waypoints.
    pub max_steps: usize,
    pub failure_schedule: Vec<FailureEvent>,
    pub filter: VelocityFilter,
    /// Feed encoder-based failure detection into the controller.
    pub detect_failures: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            waypoints: Vec::new(),
            goal_tolerance: 0.01,
            waypoint_budget: 60,
            timed: false,
            max_steps: 400,
            failure_schedule: Vec::new(),
            filter: VelocityFilter::None,
            detect_failures: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, truss: &Truss) -> Result<()> {
        let d = truss.dimension();
        if self.waypoints.iter().any(|w| w.len() != d || w.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter("waypoints must be finite points".into()));
        }
        if !(self.goal_tolerance > 0.0) {
            return Err(Error::InvalidParameter("goal_tolerance must be positive".into()));
        }
        if self.waypoint_budget == 0 {
            return Err(Error::InvalidParameter("waypoint_budget must be >= 1".into()));
        }
        for e in &self.failure_schedule {
            if !(e.time >= 0.0) {
                return Err(Error::InvalidParameter("failure time must be >= 0".into()));
            }
            truss.topology().check_roller(e.roller)?;
        }
        Ok(())
    }
}

/// Telemetry for one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    /// Time at the end of the step.
    pub time: f64,
    pub waypoint: usize,
    pub goal: DVector<f64>,
    pub x_est: DVector<f64>,
    pub x_true: DVector<f64>,
    /// Commanded roller velocities.
    pub d_cmd: DVector<f64>,
    pub d_real: DVector<f64>,
    /// Barrier value at the estimate after the step.
    pub h: f64,
    pub sigma_crit: f64,
    pub h_true: f64,
    pub solve_status: SolveStatus,
    pub accepted: bool,
    pub solve_time: f64,
    pub iterations: usize,
    pub equality_residual: f64,
    pub barrier_residual: Option<f64>,
    pub broken_known: Vec<usize>,
}

impl StepRecord {
    pub fn target(&self, positions: &DVector<f64>, vertex: usize, d: usize) -> DVector<f64> {
        positions.rows(vertex * d, d).into_owned()
    }
}

/// Records of a run plus the error that ended it early, if any.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub records: Vec<StepRecord>,
    pub home: Configuration,
    pub waypoints_reached: Vec<bool>,
    pub error: Option<Error>,
}

impl SimOutcome {
    pub fn into_result(self) -> Result<Self> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

pub struct Simulation<'a> {
    truss: &'a Truss,
    pub controller: Controller<'a>,
    pub plant: Plant<'a>,
    pub config: SimConfig,
    detector: FailureDetector,
    home: Configuration,
    waypoint: usize,
    steps_on_waypoint: usize,
    reached: Vec<bool>,
    pending_events: Vec<FailureEvent>,
    last_d_real: DVector<f64>,
    k: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(
        truss: &'a Truss,
        spec: ControlSpec,
        plant_config: PlantConfig,
        config: SimConfig,
        x0: Configuration,
    ) -> Result<Self> {
        config.validate(truss)?;
        let mut spec = spec;
        if let Some(first) = config.waypoints.first() {
            spec.goal = first.clone();
        } else {
            spec.goal = truss.vertex_position(&x0, spec.target_vertex);
        }
        let mut controller = Controller::new(truss, spec, x0.clone())?;
        let mut plant = Plant::new(truss, plant_config, x0.clone())?;
        let first = plant.read_encoders();
        let last_d_real = first.d_real.clone();
        if controller.spec.mode == ControlMode::ClosedLoop {
            controller.attach_encoders(first, config.filter);
        }
        let mut pending_events = config.failure_schedule.clone();
        pending_events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self {
            truss,
            controller,
            plant,
            detector: FailureDetector::new(truss.roller_count()),
            home: x0,
            waypoint: 0,
            steps_on_waypoint: 0,
            reached: alloc::vec![false; config.waypoints.len()],
            pending_events,
            last_d_real,
            config,
            k: 0,
        })
    }

    pub fn is_finished(&self) -> bool {
        if self.k >= self.config.max_steps {
            return true;
        }
        !self.config.waypoints.is_empty() && self.waypoint >= self.config.waypoints.len()
    }

    pub fn current_goal(&self) -> &DVector<f64> {
        &self.controller.spec.goal
    }

    /// Replaces the waypoint list by a single goal.
    pub fn set_goal(&mut self, goal: DVector<f64>) {
        self.config.waypoints = alloc::vec![goal.clone()];
        self.reached = alloc::vec![false];
        self.waypoint = 0;
        self.steps_on_waypoint = 0;
        self.controller.spec.goal = goal;
    }

    /// Marks a roller failed or healthy in the plant and, when the
    /// controller is failure aware, in its model.
    pub fn set_failure(&mut self, roller: usize, failed: bool) -> Result<()> {
        self.plant.set_failed(roller, failed)?;
        if failed {
            self.controller.spec.broken_rollers.insert(roller);
        } else {
            self.controller.spec.broken_rollers.remove(&roller);
        }
        Ok(())
    }

    fn advance_waypoint(&mut self) {
        let d = self.truss.dimension();
        let n = self.config.waypoints.len();
        while self.waypoint < n {
            let goal = &self.config.waypoints[self.waypoint];
            let at = self.controller.estimate().positions.rows(self.controller.spec.target_vertex * d, d);
            let close = (goal - at).norm() <= self.config.goal_tolerance;
            if close {
                self.reached[self.waypoint] = true;
            }
            let expired = self.steps_on_waypoint >= self.config.waypoint_budget;
            if expired || (close && !self.config.timed) {
                self.waypoint += 1;
                self.steps_on_waypoint = 0;
            } else {
                break;
            }
        }
        if let Some(goal) = self.config.waypoints.get(self.waypoint) {
            self.controller.spec.goal = goal.clone();
        }
    }

    fn apply_due_failures(&mut self, time: f64) -> Result<()> {
        while let Some(e) = self.pending_events.first().copied() {
            if e.time > time + 1e-12 {
                break;
            }
            self.pending_events.remove(0);
            self.plant.set_failed(e.roller, e.failed)?;
            if self.controller.spec.failure_aware {
                if e.failed {
                    self.controller.spec.broken_rollers.insert(e.roller);
                } else {
                    self.controller.spec.broken_rollers.remove(&e.roller);
                }
            }
        }
        Ok(())
    }

    /// Runs one control step. Returns `None` once the run is over.
    pub fn step(&mut self, clock: &dyn Clock) -> Result<Option<StepRecord>> {
        self.advance_waypoint();
        if self.is_finished() {
            return Ok(None);
        }
        let dt = self.controller.spec.dt();
        self.apply_due_failures(self.plant.state().time)?;

        let solve = self.controller.command(clock)?;
        let d_before = self.last_d_real.clone();
        self.plant.apply_command(&solve.ddot, dt)?;
        let frame = self.plant.read_encoders();
        self.last_d_real = frame.d_real.clone();
        match self.controller.spec.mode {
            ControlMode::OpenLoop => self.controller.propagate(&solve.ddot)?,
            ControlMode::ClosedLoop => {
                self.controller.observe(frame.clone())?;
            }
        }
        if self.config.detect_failures {
            let measured = &frame.d_real - d_before;
            let commanded = &solve.ddot * dt;
            for r in self.detector.observe(&commanded, &measured) {
                if self.controller.spec.failure_aware {
                    self.controller.spec.broken_rollers.insert(r);
                }
            }
        }

        let params = self.controller.spec.barrier;
        let est = barrier(self.truss, self.controller.estimate(), &params)?;
        let h_true = barrier(self.truss, &self.plant.state().x_true, &params)?.h;
        let record = StepRecord {
            k: self.k,
            time: self.plant.state().time,
            waypoint: self.waypoint,
            goal: self.controller.spec.goal.clone(),
            x_est: self.controller.estimate().positions.clone(),
            x_true: self.plant.state().x_true.positions.clone(),
            accepted: solve.is_accepted(),
            d_cmd: solve.ddot,
            d_real: frame.d_real,
            h: est.h,
            sigma_crit: est.sigma_crit,
            h_true,
            solve_status: solve.status,
            solve_time: solve.solve_time,
            iterations: solve.iterations,
            equality_residual: solve.residuals.families.max(),
            barrier_residual: solve.residuals.barrier,
            broken_known: self.controller.spec.broken_rollers.iter().copied().collect(),
        };
        self.k += 1;
        self.steps_on_waypoint += 1;
        Ok(Some(record))
    }

    /// Steps until finished or a fatal error; records up to the error are kept.
    pub fn run(mut self, clock: &dyn Clock) -> SimOutcome {
        let mut records = Vec::new();
        let error = loop {
            match self.step(clock) {
                Ok(Some(r)) => records.push(r),
                Ok(None) => break None,
                Err(e) => break Some(e),
            }
        };
        SimOutcome {
            records,
            home: self.home,
            waypoints_reached: self.reached,
            error,
        }
    }

    pub fn detector_flags(&self) -> &BTreeSet<usize> {
        self.detector.flagged()
    }
}

/// Positions of `vertex` along a run, as `(time, point)` pairs; the home
/// pose is included at its own time.
pub fn target_trace(outcome: &SimOutcome, vertex: usize, d: usize, truth: bool) -> Vec<(f64, DVector<f64>)> {
    let mut trace = Vec::with_capacity(outcome.records.len() + 1);
    trace.push((outcome.home.time, outcome.home.positions.rows(vertex * d, d).into_owned()));
    for r in &outcome.records {
        let x = if truth { &r.x_true } else { &r.x_est };
        trace.push((r.time, x.rows(vertex * d, d).into_owned()));
    }
    trace
}
