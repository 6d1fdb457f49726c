//! Rigidity barrier `h(x) = σ_crit(R(x)) − σ_min` and its discrete-time
//! decay condition `h(x_{k+1}) ≥ (1 − α) h(x_k)`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimator::{integrate, integrate_observed};
use crate::linalg::singular_spectrum;
use crate::model::{Configuration, Truss};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierParams {
    /// Safety margin on the critical singular value.
    pub sigma_min: f64,
    /// Allowed fractional decay of `h` per step, in (0, 1).
    pub alpha: f64,
    /// Control period (s).
    pub dt: f64,
    /// Euler substeps used to predict the next configuration.
    pub substeps: usize,
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self {
            sigma_min: 0.005,
            alpha: 0.2,
            dt: 0.5,
            substeps: 10,
        }
    }
}

impl BarrierParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("barrier {what}")));
        if !(self.sigma_min >= 0.0) || !self.sigma_min.is_finite() {
            return bad("sigma_min must be finite and >= 0");
        }
        // α = 1 would drop the decay bound to plain h ≥ 0 at the next sample.
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        if self.substeps == 0 {
            return bad("substeps must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierEval {
    pub sigma_crit: f64,
    pub h: f64,
    /// Full spectrum of `R(x)`, descending.
    pub singular_values: Vec<f64>,
}

/// Spectrum of the rigidity matrix as a map on all `N·d` coordinates.
pub fn rigidity_spectrum(truss: &Truss, x: &Configuration) -> Result<Vec<f64>> {
    Ok(singular_spectrum(&truss.rigidity_matrix(x)?))
}

fn critical_of(truss: &Truss, spectrum: &[f64]) -> f64 {
    let rigid = truss.topology().rigid_modes();
    spectrum[spectrum.len() - 1 - rigid]
}

/// The smallest singular value above the rigid-body null space
/// (the 4th smallest in the plane).
pub fn sigma_crit(truss: &Truss, x: &Configuration) -> Result<f64> {
    Ok(critical_of(truss, &rigidity_spectrum(truss, x)?))
}

pub fn barrier(truss: &Truss, x: &Configuration, params: &BarrierParams) -> Result<BarrierEval> {
    let singular_values = rigidity_spectrum(truss, x)?;
    let sigma_crit = critical_of(truss, &singular_values);
    Ok(BarrierEval {
        sigma_crit,
        h: sigma_crit - params.sigma_min,
        singular_values,
    })
}

/// Predicted configuration after holding the roller rates of `xdot` for one
/// control period.
pub fn predict(
    truss: &Truss,
    x: &Configuration,
    xdot: &DVector<f64>,
    params: &BarrierParams,
) -> Result<Configuration> {
    let r = truss.rigidity_matrix(x)?;
    let ddot = truss.roller_rates(&r, xdot);
    Ok(integrate(truss, x, &ddot, params.dt, params.substeps)?)
}

/// Smallest `σ_crit` over the substep states of one predicted control
/// period, the final state included.
pub fn predicted_sigma_floor(
    truss: &Truss,
    x: &Configuration,
    ddot: &DVector<f64>,
    params: &BarrierParams,
) -> Result<f64> {
    let mut lowest = f64::INFINITY;
    integrate_observed(truss, x, ddot, params.dt, params.substeps, |state| {
        lowest = lowest.min(sigma_crit(truss, state)?);
        Ok(())
    })?;
    Ok(lowest)
}

/// `g(ẋ) = h(x_{k+1}) − (1 − α) h(x_k)`, with `h(x_{k+1})` taken as the
/// lowest barrier value along the predicted substep path so that a step
/// cannot pass through a rigidity loss between samples. The step is safe
/// iff `g ≥ 0`.
pub fn dtcbf_residual(
    truss: &Truss,
    x: &Configuration,
    xdot: &DVector<f64>,
    params: &BarrierParams,
) -> Result<f64> {
    let constraint = DtcbfConstraint::new(truss, x, *params)?;
    let r = truss.rigidity_matrix(x)?;
    let ddot = truss.roller_rates(&r, xdot);
    Ok(predicted_sigma_floor(truss, x, &ddot, params)? - params.sigma_min - constraint.floor())
}

/// The decay constraint at a fixed `x_k`, evaluated repeatedly by the solver.
#[derive(Debug, Clone)]
pub struct DtcbfConstraint<'a> {
    truss: &'a Truss,
    x: Configuration,
    h: f64,
    params: BarrierParams,
    rigidity: nalgebra::DMatrix<f64>,
}

impl<'a> DtcbfConstraint<'a> {
    /// Fails with `InitializationUnsafe` when `h(x_k) < 0`.
    pub fn new(truss: &'a Truss, x: &Configuration, params: BarrierParams) -> Result<Self> {
        params.validate()?;
        let h = barrier(truss, x, &params)?.h;
        if h < 0.0 {
            return Err(Error::InitializationUnsafe { h });
        }
        Ok(Self {
            truss,
            x: x.clone(),
            h,
            params,
            rigidity: truss.rigidity_matrix(x)?,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Lower bound `(1 − α) h(x_k)` for the next sample.
    pub fn floor(&self) -> f64 {
        (1.0 - self.params.alpha) * self.h
    }

    /// `g(ẋ)`. A prediction that runs into a singular or collapsed pose is
    /// reported as a violation of size `1 + h(x_k)`.
    pub fn residual(&self, xdot: &DVector<f64>) -> f64 {
        let ddot = self.truss.roller_rates(&self.rigidity, xdot);
        predicted_sigma_floor(self.truss, &self.x, &ddot, &self.params)
            .map(|s| s - self.params.sigma_min - self.floor())
            .unwrap_or(-(1.0 + self.h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::default_triforce;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn triforce() -> (Truss, Configuration) {
        let (topo, x) = default_triforce(1.0);
        (Truss::new(topo).unwrap(), x)
    }

    /// Apex flattened onto the segment between vertices 3 and 5.
    fn collapsed_top() -> Configuration {
        let (_, mut x) = default_triforce(1.0);
        x.positions[8] = 1.0;
        x.positions[9] = libm::sqrt(3.0) / 2.0;
        x
    }

    /// Oracle: singular values from the eigenvalues of RᵀR.
    fn oracle_sigma4(truss: &Truss, x: &Configuration) -> f64 {
        let r = truss.rigidity_matrix(x).unwrap();
        let gram: DMatrix<f64> = r.transpose() * r;
        let mut ev: Vec<f64> = gram.symmetric_eigenvalues().iter().map(|v| libm::sqrt(v.max(0.0))).collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev[3]
    }

    #[test]
    fn nominal_pose_is_safe() {
        let (truss, x) = triforce();
        let eval = barrier(&truss, &x, &BarrierParams::default()).unwrap();
        assert_eq!(eval.singular_values.len(), 12);
        assert!(eval.singular_values[9..].iter().all(|s| *s < 1e-10));
        assert!(eval.sigma_crit > 1e-4);
        assert_relative_eq!(eval.sigma_crit, oracle_sigma4(&truss, &x), epsilon = 1e-7);
        assert_relative_eq!(eval.h, eval.sigma_crit - 0.005, epsilon = 1e-15);
    }

    #[test]
    fn collapsed_module_loses_rigidity() {
        let (truss, _) = triforce();
        let x = collapsed_top();
        let s = sigma_crit(&truss, &x).unwrap();
        assert!(s <= 1e-8, "sigma_crit {s:e}");
        let h = barrier(&truss, &x, &BarrierParams::default()).unwrap().h;
        assert_relative_eq!(h, -0.005, epsilon = 1e-8);
    }

    #[test]
    fn zero_margin_barrier_equals_sigma_crit() {
        let (truss, x) = triforce();
        let params = BarrierParams { sigma_min: 0.0, ..Default::default() };
        let eval = barrier(&truss, &x, &params).unwrap();
        assert_eq!(eval.h, eval.sigma_crit);
    }

    #[test]
    fn standing_still_keeps_alpha_fraction() {
        let (truss, x) = triforce();
        let params = BarrierParams::default();
        let h = barrier(&truss, &x, &params).unwrap().h;
        let g = dtcbf_residual(&truss, &x, &DVector::zeros(12), &params).unwrap();
        assert_relative_eq!(g, params.alpha * h, epsilon = 1e-12);
    }

    #[test]
    fn unsafe_start_is_refused() {
        let (truss, _) = triforce();
        let x = collapsed_top();
        assert!(matches!(
            DtcbfConstraint::new(&truss, &x, BarrierParams::default()),
            Err(Error::InitializationUnsafe { .. })
        ));
    }

    #[test]
    fn alpha_bounds_are_enforced() {
        for alpha in [0.0, 1.0, 1.5] {
            let p = BarrierParams { alpha, ..Default::default() };
            assert!(p.validate().is_err());
        }
    }

    #[test]
    fn large_step_toward_collapse_violates_decay() {
        // Line search along the straight path from the nominal pose toward
        // the collapsed pose: find the first fraction whose one-step Euler
        // prediction breaks the decay bound.
        let (truss, x) = triforce();
        let params = BarrierParams { substeps: 1, ..Default::default() };
        let target = collapsed_top();
        let mut found = false;
        for i in 1..=20 {
            let frac = i as f64 / 20.0;
            let xdot = (&target.positions - &x.positions) * (frac / params.dt);
            let g = dtcbf_residual(&truss, &x, &xdot, &params);
            if let Ok(g) = g {
                if g < 0.0 {
                    found = true;
                    break;
                }
            }
        }
        assert!(found);
    }

    proptest! {
        #[test]
        fn sigma_crit_is_invariant_under_rigid_motion(angle in -3.0f64..3.0, tx in -2.0f64..2.0, ty in -2.0f64..2.0) {
            let (truss, x) = triforce();
            let (s, c) = (libm::sin(angle), libm::cos(angle));
            let mut moved = x.clone();
            for v in 0..6 {
                let (px, py) = (x.positions[2 * v], x.positions[2 * v + 1]);
                moved.positions[2 * v] = c * px - s * py + tx;
                moved.positions[2 * v + 1] = s * px + c * py + ty;
            }
            let a = sigma_crit(&truss, &x).unwrap();
            let b = sigma_crit(&truss, &moved).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
