//! Forward kinematics and encoder-driven state estimation.
//!
//! Roller velocities map to vertex velocities through the augmented system
//! `[R(x); A_fixed] ẋ = [Bᵀ ḋ; 0]`. Positions are advanced with substepped
//! forward Euler; after each substep the configuration is pulled back onto
//! the constant-perimeter manifold by Gauss-Newton corrections, which
//! removes the second-order perimeter growth of a plain tangent step.

use alloc::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Configuration, Truss};

/// Pivot ratio below which the augmented rigidity system is singular.
const SINGULAR_PIVOT_RATIO: f64 = 1e-12;
const PROJECTION_ITERATIONS: usize = 8;
/// Perimeter and fixed-coordinate residual (m) accepted after projection.
const PROJECTION_TOLERANCE: f64 = 1e-10;

fn augmented_matrix(truss: &Truss, x: &Configuration) -> Result<DMatrix<f64>> {
    let r = truss.rigidity_matrix(x)?;
    let fixed = truss.fixed_rows();
    let mut aug = DMatrix::zeros(r.nrows() + fixed.nrows(), r.ncols());
    aug.rows_mut(0, r.nrows()).copy_from(&r);
    aug.rows_mut(r.nrows(), fixed.nrows()).copy_from(fixed);
    Ok(aug)
}

fn solve_augmented(aug: DMatrix<f64>, rhs: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = aug.ncols();
    if aug.nrows() == n {
        let lu = aug.lu();
        let diag = lu.u().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
        if !(lo > SINGULAR_PIVOT_RATIO * hi) {
            return Err(Error::SingularAugmentedMatrix);
        }
        lu.solve(&rhs).ok_or(Error::SingularAugmentedMatrix)
    } else {
        // Over-braced frameworks: least squares on a full-column-rank system.
        let svd = aug.svd(true, true);
        let max = svd.singular_values.max();
        if svd.singular_values.iter().any(|&s| !(s > SINGULAR_PIVOT_RATIO * max)) {
            return Err(Error::SingularAugmentedMatrix);
        }
        svd.solve(&rhs, 0.0).map_err(|_| Error::SingularAugmentedMatrix)
    }
}

/// Forward kinematics Jacobian `J(x) = [R; A_fixed]⁻¹ [Bᵀ; 0]`, mapping
/// roller velocities to vertex velocities.
pub fn forward_jacobian(truss: &Truss, x: &Configuration) -> Result<DMatrix<f64>> {
    let aug = augmented_matrix(truss, x)?;
    let bt = truss.actuation_matrix().transpose();
    let mut rhs = DMatrix::zeros(aug.nrows(), bt.ncols());
    rhs.rows_mut(0, bt.nrows()).copy_from(&bt);
    solve_augmented(aug, rhs)
}

/// `J(x) ḋ` without forming `J`.
pub fn forward_velocity(truss: &Truss, x: &Configuration, ddot: &DVector<f64>) -> Result<DVector<f64>> {
    let aug = augmented_matrix(truss, x)?;
    let rates = truss.actuation_matrix().tr_mul(ddot);
    let mut rhs = DMatrix::zeros(aug.nrows(), 1);
    rhs.view_mut((0, 0), (rates.len(), 1)).copy_from(&rates);
    Ok(solve_augmented(aug, rhs)?.column(0).into_owned())
}

/// Integration stopped early; `last_good` is the final valid configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationAborted {
    pub error: Error,
    pub last_good: Configuration,
}

impl From<IntegrationAborted> for Error {
    fn from(value: IntegrationAborted) -> Self {
        value.error
    }
}

fn fixed_values(truss: &Truss, x: &Configuration) -> DVector<f64> {
    truss.fixed_rows() * &x.positions
}

fn project_to_perimeters(
    truss: &Truss,
    x: &mut Configuration,
    perimeters: &DVector<f64>,
    fixed: &DVector<f64>,
) -> Result<()> {
    let fixed_rows = truss.fixed_rows();
    let n_loops = perimeters.len();
    let mut worst = f64::INFINITY;
    for _ in 0..=PROJECTION_ITERATIONS {
        let r = truss.rigidity_matrix(x)?;
        let lengths = truss.edge_lengths(x)?;
        let mut residual = DVector::zeros(n_loops + fixed.len());
        residual
            .rows_mut(0, n_loops)
            .copy_from(&(truss.loop_indicator() * lengths - perimeters));
        residual
            .rows_mut(n_loops, fixed.len())
            .copy_from(&(fixed_rows * &x.positions - fixed));
        worst = residual.amax();
        if worst <= 0.01 * PROJECTION_TOLERANCE {
            return Ok(());
        }
        let loops = truss.loop_indicator() * &r;
        let mut c = DMatrix::zeros(n_loops + fixed_rows.nrows(), r.ncols());
        c.rows_mut(0, n_loops).copy_from(&loops);
        c.rows_mut(n_loops, fixed_rows.nrows()).copy_from(fixed_rows);
        let gram = &c * c.transpose();
        let multipliers = gram
            .cholesky()
            .ok_or(Error::SingularAugmentedMatrix)?
            .solve(&residual);
        x.positions -= c.tr_mul(&multipliers);
    }
    if worst <= PROJECTION_TOLERANCE {
        Ok(())
    } else {
        Err(Error::ProjectionDiverged { residual: worst })
    }
}

/// Advances `x` under constant roller velocity `ddot` for `dt` seconds using
/// `substeps` Euler substeps, recomputing the Jacobian each substep.
/// Triangle perimeters and fixed coordinates are preserved exactly. In the
/// plane, a substep that flips the orientation of any three-cycle aborts
/// with `SingularAugmentedMatrix`.
pub fn integrate(
    truss: &Truss,
    x: &Configuration,
    ddot: &DVector<f64>,
    dt: f64,
    substeps: usize,
) -> Result<Configuration, IntegrationAborted> {
    integrate_observed(truss, x, ddot, dt, substeps, |_| Ok(()))
}

/// [`integrate`] that hands every intermediate substep state to `observe`;
/// an error from `observe` aborts at the previous state.
pub fn integrate_observed<F>(
    truss: &Truss,
    x: &Configuration,
    ddot: &DVector<f64>,
    dt: f64,
    substeps: usize,
    mut observe: F,
) -> Result<Configuration, IntegrationAborted>
where
    F: FnMut(&Configuration) -> Result<()>,
{
    let abort = |error, last_good: &Configuration| IntegrationAborted {
        error,
        last_good: last_good.clone(),
    };
    if substeps == 0 || !(dt >= 0.0) {
        return Err(abort(
            Error::InvalidParameter("substeps must be >= 1 and dt >= 0".into()),
            x,
        ));
    }
    let perimeters = truss.perimeters(x).map_err(|e| abort(e, x))?;
    let fixed = fixed_values(truss, x);
    let fixed_index: alloc::vec::Vec<usize> = truss
        .topology()
        .fixed_dofs
        .iter()
        .map(|f| f.vertex * truss.dimension() + f.axis)
        .collect();

    let orientation = truss.cycle_orientations(x);
    let h = dt / substeps as f64;
    let mut current = x.clone();
    for _ in 0..substeps {
        let mut next = current.clone();
        let step = forward_velocity(truss, &current, ddot).map_err(|e| abort(e, &current))?;
        next.positions.axpy(h, &step, 1.0);
        project_to_perimeters(truss, &mut next, &perimeters, &fixed)
            .map_err(|e| abort(e, &current))?;
        for (&i, &v) in fixed_index.iter().zip(fixed.iter()) {
            next.positions[i] = v;
        }
        // A cycle changing orientation within one substep jumped across a
        // collinear, hence singular, pose.
        let flipped = truss
            .cycle_orientations(&next)
            .iter()
            .zip(orientation.iter())
            .any(|(a, b)| a * b <= 0.0);
        if flipped {
            return Err(abort(Error::SingularAugmentedMatrix, &current));
        }
        next.time = current.time + h;
        observe(&next).map_err(|e| abort(e, &current))?;
        current = next;
    }
    current.time = x.time + dt;
    Ok(current)
}

/// Timestamped roller tube positions read from the encoders (m).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderFrame {
    pub time: f64,
    pub d_real: DVector<f64>,
}

/// Raw finite-difference roller velocity between two frames.
pub fn finite_difference(prev: &EncoderFrame, curr: &EncoderFrame) -> Result<DVector<f64>> {
    let dt = curr.time - prev.time;
    if !(dt > 0.0) {
        return Err(Error::NonmonotonicTime);
    }
    Ok((&curr.d_real - &prev.d_real) / dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityFilter {
    None,
    /// Mean of the last `window` raw estimates.
    Sliding { window: usize },
}

/// Roller velocity estimator with optional sliding-mean smoothing.
#[derive(Debug, Clone)]
pub struct RollerVelocityEstimator {
    filter: VelocityFilter,
    history: VecDeque<DVector<f64>>,
}

impl RollerVelocityEstimator {
    pub fn new(filter: VelocityFilter) -> Self {
        Self {
            filter,
            history: VecDeque::new(),
        }
    }

    pub fn estimate(&mut self, prev: &EncoderFrame, curr: &EncoderFrame) -> Result<DVector<f64>> {
        let raw = finite_difference(prev, curr)?;
        match self.filter {
            VelocityFilter::None => Ok(raw),
            VelocityFilter::Sliding { window } => {
                let window = window.max(1);
                self.history.push_back(raw);
                while self.history.len() > window {
                    self.history.pop_front();
                }
                let mut sum = DVector::zeros(curr.d_real.len());
                for v in &self.history {
                    sum += v;
                }
                Ok(sum / self.history.len() as f64)
            }
        }
    }
}

/// Configuration estimate driven by encoder frames.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    pub x_est: Configuration,
    pub last_frame: EncoderFrame,
    pub velocity: RollerVelocityEstimator,
    pub substeps: usize,
}

impl EstimatorState {
    pub fn new(x0: Configuration, first: EncoderFrame, filter: VelocityFilter, substeps: usize) -> Self {
        Self {
            x_est: x0,
            last_frame: first,
            velocity: RollerVelocityEstimator::new(filter),
            substeps,
        }
    }

    /// Consumes a new frame and returns the roller velocity estimate used.
    /// On integration failure the estimate stays at the last good state.
    pub fn update(&mut self, truss: &Truss, frame: EncoderFrame) -> Result<DVector<f64>> {
        let ddot = self.velocity.estimate(&self.last_frame, &frame)?;
        let dt = frame.time - self.last_frame.time;
        self.last_frame = frame;
        match integrate(truss, &self.x_est, &ddot, dt, self.substeps) {
            Ok(x) => {
                self.x_est = x;
                Ok(ddot)
            }
            Err(aborted) => {
                self.x_est = aborted.last_good;
                Err(aborted.error)
            }
        }
    }
}
