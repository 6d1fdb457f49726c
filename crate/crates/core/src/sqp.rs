//! Dense SQP for a convex quadratic objective with linear equalities and at
//! most one smooth nonlinear inequality `g(x) ≥ 0`.
//!
//! The equalities are eliminated exactly through an orthonormal null-space
//! basis, leaving an unconstrained quadratic in the reduced variable. When
//! the inequality is violated at the reduced minimiser the solver runs a
//! Han-Powell SQP loop: each subproblem has a single linearised constraint
//! and is solved in closed form, steps are globalised with an ℓ1 merit line
//! search, and the Lagrangian Hessian is tracked with damped BFGS. A
//! feasible iterate is optimal when the projected Lagrangian gradient or the
//! subproblem's predicted change falls below the stationarity tolerance.
//! Inequality gradients are forward differences.

use nalgebra::{DMatrix, DVector};

use crate::linalg::affine_solution_set;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpOptions {
    pub max_iterations: usize,
    pub stationarity_tolerance: f64,
    pub constraint_tolerance: f64,
    pub fd_step: f64,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            stationarity_tolerance: 1e-8,
            constraint_tolerance: 1e-6,
            fd_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

/// `½ xᵀ H x + cᵀ x`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
}

impl QuadraticObjective {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }
}

#[derive(Debug, Clone)]
pub struct SqpSolution {
    pub x: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Multiplier of the inequality (0 when inactive or absent).
    pub multiplier: f64,
    /// `‖A x − b‖∞`.
    pub equality_residual: f64,
    /// `g(x)` when an inequality was supplied.
    pub inequality: Option<f64>,
}

struct Reduced<'a, G> {
    particular: &'a DVector<f64>,
    basis: &'a DMatrix<f64>,
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    g: G,
    fd_step: f64,
}

impl<G: Fn(&DVector<f64>) -> f64> Reduced<'_, G> {
    fn lift(&self, z: &DVector<f64>) -> DVector<f64> {
        self.particular + self.basis * z
    }

    fn q(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    fn grad_q(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.hessian * z + &self.linear
    }

    fn g(&self, z: &DVector<f64>) -> f64 {
        (self.g)(&self.lift(z))
    }

    fn grad_g(&self, z: &DVector<f64>, gz: f64) -> DVector<f64> {
        let mut probe = z.clone();
        DVector::from_fn(z.len(), |i, _| {
            let old = probe[i];
            probe[i] = old + self.fd_step;
            let slope = (self.g(&probe) - gz) / self.fd_step;
            probe[i] = old;
            slope
        })
    }
}

fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let n = m.nrows();
    let scale = m.diagonal().amax().max(1.0);
    let mut shift = 0.0;
    loop {
        let shifted = m + DMatrix::identity(n, n) * shift;
        if let Some(ch) = shifted.cholesky() {
            return ch.solve(rhs);
        }
        shift = if shift == 0.0 { 1e-12 * scale } else { shift * 10.0 };
    }
}

/// Minimises `objective` subject to `a_eq x = b_eq` and, if given,
/// `inequality(x) ≥ 0`. `warm_start` is projected onto the equality set and
/// used as the SQP starting point when it has a lower merit than the
/// equality-constrained minimiser.
pub fn solve<G>(
    objective: &QuadraticObjective,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    inequality: Option<G>,
    warm_start: Option<&DVector<f64>>,
    options: &SqpOptions,
) -> SqpSolution
where
    G: Fn(&DVector<f64>) -> f64,
{
    let set = affine_solution_set(a_eq, b_eq);
    let eq_residual = |x: &DVector<f64>| {
        if a_eq.nrows() == 0 {
            0.0
        } else {
            (a_eq * x - b_eq).amax()
        }
    };
    if set.residual > options.constraint_tolerance {
        let x = set.particular.clone();
        let inequality_value = inequality.as_ref().map(|g| g(&x));
        return SqpSolution {
            equality_residual: eq_residual(&x),
            x,
            status: SolveStatus::Infeasible,
            iterations: 0,
            multiplier: 0.0,
            inequality: inequality_value,
        };
    }

    let z_dim = set.basis.ncols();
    let hz = set.basis.tr_mul(&(&objective.hessian * &set.basis));
    let cz = set
        .basis
        .tr_mul(&(&objective.hessian * &set.particular + &objective.linear));
    let z0 = if z_dim == 0 {
        DVector::zeros(0)
    } else {
        -spd_solve(&hz, &cz)
    };

    let Some(g) = inequality else {
        let x = &set.particular + &set.basis * &z0;
        return SqpSolution {
            equality_residual: eq_residual(&x),
            x,
            status: SolveStatus::Optimal,
            iterations: 0,
            multiplier: 0.0,
            inequality: None,
        };
    };

    let problem = Reduced {
        particular: &set.particular,
        basis: &set.basis,
        hessian: hz,
        linear: cz,
        g,
        fd_step: options.fd_step,
    };
    let finish = |z: &DVector<f64>, gz: f64, status, iterations, multiplier| {
        let x = problem.lift(z);
        SqpSolution {
            equality_residual: eq_residual(&x),
            x,
            status,
            iterations,
            multiplier,
            inequality: Some(gz),
        }
    };

    let g0 = problem.g(&z0);
    if g0 >= 0.0 {
        return finish(&z0, g0, SolveStatus::Optimal, 0, 0.0);
    }
    if z_dim == 0 {
        let status = if g0 >= -options.constraint_tolerance {
            SolveStatus::Optimal
        } else {
            SolveStatus::Infeasible
        };
        return finish(&z0, g0, status, 0, 0.0);
    }

    let tol = options.constraint_tolerance;
    // Start from the cheapest feasible candidate, else the least violating
    // one: the reduced minimiser, the warm start, or the minimum-norm point.
    let mut z = z0.clone();
    let mut gz = g0;
    let mut candidates = alloc::vec![DVector::zeros(z_dim)];
    if let Some(w) = warm_start {
        candidates.insert(0, set.basis.tr_mul(&(w - &set.particular)));
    }
    for zc in candidates {
        let gc = problem.g(&zc);
        let better = match (gc >= -tol, gz >= -tol) {
            (true, true) => problem.q(&zc) < problem.q(&z),
            (true, false) => true,
            (false, true) => false,
            (false, false) => gc > gz,
        };
        if better {
            z = zc;
            gz = gc;
        }
    }

    let mut hess = problem.hessian.clone();
    let mut penalty: f64 = 1.0;
    let mut lambda = 0.0;
    let mut best: Option<(f64, DVector<f64>, f64)> = None;
    let mut least_violation = (gz, z.clone());
    let mut stall = 0usize;

    for iteration in 1..=options.max_iterations {
        let grad_q = problem.grad_q(&z);
        let grad_g = problem.grad_g(&z, gz);

        if gz >= -tol {
            let qz = problem.q(&z);
            if best.as_ref().is_none_or(|(bq, _, _)| qz < *bq) {
                best = Some((qz, z.clone(), gz));
            }
            // First-order optimality with a least-squares multiplier.
            let gg = grad_g.norm_squared();
            let mult = if gz <= tol && gg > 0.0 {
                (grad_g.dot(&grad_q) / gg).max(0.0)
            } else {
                0.0
            };
            let stationarity = (&grad_q - &grad_g * mult).amax();
            if stationarity <= options.stationarity_tolerance {
                return finish(&z, gz, SolveStatus::Optimal, iteration, mult);
            }
        }

        // Subproblem: min ½pᵀBp + ∇qᵀp  s.t.  g + ∇gᵀp ≥ 0.
        let p_free = -spd_solve(&hess, &grad_q);
        let slack = gz + grad_g.dot(&p_free);
        let (p, lambda_new) = if slack >= 0.0 {
            (p_free, 0.0)
        } else {
            let w = spd_solve(&hess, &grad_g);
            let curvature = grad_g.dot(&w);
            if !(curvature > 1e-300) {
                break;
            }
            let l = -slack / curvature;
            (p_free + w * l, l)
        };

        // Predicted first-order change of the subproblem, scaled like the
        // objective; small means no descent direction is left.
        let predicted = grad_q.dot(&p).abs() + lambda_new * gz.abs();
        if gz >= -tol && predicted <= options.stationarity_tolerance * (1.0 + problem.q(&z).abs()) {
            return finish(&z, gz, SolveStatus::Optimal, iteration, lambda_new);
        }
        if p.amax() <= 1e-13 * (1.0 + z.amax()) {
            if gz >= -tol {
                return finish(&z, gz, SolveStatus::Optimal, iteration, lambda_new);
            }
            break;
        }

        penalty = penalty.max(1.5 * lambda_new + 1e-3);
        let merit = |q: f64, g: f64| q + penalty * (-g).max(0.0);
        let phi = merit(problem.q(&z), gz);
        let slope = grad_q.dot(&p) - penalty * (-gz).max(0.0);
        let mut t = 1.0;
        let (mut z_new, mut g_new);
        loop {
            z_new = &z + &p * t;
            g_new = problem.g(&z_new);
            if merit(problem.q(&z_new), g_new) <= phi + 1e-4 * t * slope.min(0.0) || t < 1e-8 {
                break;
            }
            t *= 0.5;
        }

        let s = &z_new - &z;
        let grad_g_new = problem.grad_g(&z_new, g_new);
        let y = (problem.grad_q(&z_new) - &grad_g_new * lambda_new)
            - (&grad_q - &grad_g * lambda_new);
        damped_bfgs(&mut hess, &s, &y);

        let old_violation = (-least_violation.0).max(0.0);
        z = z_new;
        gz = g_new;
        lambda = lambda_new;
        if gz > least_violation.0 {
            least_violation = (gz, z.clone());
        }
        if gz < -tol {
            if (-least_violation.0).max(0.0) < 0.99 * old_violation {
                stall = 0;
            } else {
                stall += 1;
            }
            if stall >= 15 && iteration >= 30 && best.is_none() {
                break;
            }
        } else {
            stall = 0;
        }
    }

    if gz >= -tol {
        let qz = problem.q(&z);
        if best.as_ref().is_none_or(|(bq, _, _)| qz < *bq) {
            best = Some((qz, z.clone(), gz));
        }
    }
    match best {
        Some((_, zb, gb)) => finish(&zb, gb, SolveStatus::MaxIterations, options.max_iterations, lambda),
        None => {
            let (gl, zl) = least_violation;
            finish(&zl, gl, SolveStatus::Infeasible, options.max_iterations, lambda)
        }
    }
}

/// Powell-damped BFGS update keeping `b` positive definite.
fn damped_bfgs(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 1e-300) {
        return;
    }
    let sy = s.dot(y);
    let r = if sy >= 0.2 * sbs {
        y.clone()
    } else {
        let theta = 0.8 * sbs / (sbs - sy);
        y * theta + &bs * (1.0 - theta)
    };
    let sr = s.dot(&r);
    if !(sr > 1e-300) {
        return;
    }
    *b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
}
