//! Simulated robot: executes roller velocity commands with gain errors and
//! failures and reports noisy, quantized encoder readings.

use alloc::collections::BTreeSet;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::estimator::{integrate, EncoderFrame, IntegrationAborted};
use crate::model::{Configuration, Truss};

/// Euler substeps per control step for ground truth.
pub const GROUND_TRUTH_SUBSTEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    /// Commanded-to-actual velocity ratio per roller.
    pub gains: DVector<f64>,
    pub failed: BTreeSet<usize>,
    pub encoder_noise_std: f64,
    /// Encoder resolution (m); zero means continuous.
    pub encoder_quantum: f64,
    pub seed: u64,
    pub substeps: usize,
}

impl PlantConfig {
    pub fn ideal(rollers: usize) -> Self {
        Self {
            gains: DVector::from_element(rollers, 1.0),
            failed: BTreeSet::new(),
            encoder_noise_std: 0.0,
            encoder_quantum: 0.0,
            seed: 0,
            substeps: GROUND_TRUTH_SUBSTEPS,
        }
    }

    pub fn validate(&self, rollers: usize) -> Result<()> {
        if self.gains.len() != rollers {
            return Err(Error::DimensionMismatch { expected: rollers, found: self.gains.len() });
        }
        if self.gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::InvalidParameter("gains must be finite and >= 0".into()));
        }
        if let Some(&r) = self.failed.iter().find(|&&r| r >= rollers) {
            return Err(Error::UnknownRoller(r));
        }
        if !(self.encoder_noise_std >= 0.0 && self.encoder_noise_std.is_finite()) {
            return Err(Error::InvalidParameter("encoder_noise_std must be >= 0".into()));
        }
        if !(self.encoder_quantum >= 0.0 && self.encoder_quantum.is_finite()) {
            return Err(Error::InvalidParameter("encoder_quantum must be >= 0".into()));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x_true: Configuration,
    pub d_true: DVector<f64>,
    pub time: f64,
}

#[derive(Debug, Clone)]
pub struct Plant<'a> {
    truss: &'a Truss,
    pub config: PlantConfig,
    state: PlantState,
    rng: ChaCha8Rng,
}

impl<'a> Plant<'a> {
    pub fn new(truss: &'a Truss, config: PlantConfig, x0: Configuration) -> Result<Self> {
        config.validate(truss.roller_count())?;
        let time = x0.time;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            truss,
            state: PlantState {
                x_true: x0,
                d_true: DVector::zeros(truss.roller_count()),
                time,
            },
            config,
            rng,
        })
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    /// Roller velocities the hardware actually produces for a command.
    pub fn actual_rates(&self, ddot_cmd: &DVector<f64>) -> DVector<f64> {
        let mut actual = ddot_cmd.component_mul(&self.config.gains);
        for &r in &self.config.failed {
            actual[r] = 0.0;
        }
        actual
    }

    pub fn set_failed(&mut self, roller: usize, failed: bool) -> Result<()> {
        if roller >= self.truss.roller_count() {
            return Err(Error::UnknownRoller(roller));
        }
        if failed {
            self.config.failed.insert(roller);
        } else {
            self.config.failed.remove(&roller);
        }
        Ok(())
    }

    /// Executes `ddot_cmd` for `dt` seconds. On a singular pose the state is
    /// left at the last good configuration and the error returned.
    pub fn apply_command(&mut self, ddot_cmd: &DVector<f64>, dt: f64) -> Result<&PlantState> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        if ddot_cmd.len() != self.truss.roller_count() {
            return Err(Error::DimensionMismatch {
                expected: self.truss.roller_count(),
                found: ddot_cmd.len(),
            });
        }
        let actual = self.actual_rates(ddot_cmd);
        let next = integrate(self.truss, &self.state.x_true, &actual, dt, self.config.substeps);
        let x = match next {
            Ok(x) => x,
            Err(IntegrationAborted { error, last_good }) => {
                self.state.x_true = last_good;
                return Err(error);
            }
        };
        self.state.d_true.axpy(dt, &actual, 1.0);
        self.state.time += dt;
        self.state.x_true = x;
        self.state.x_true.time = self.state.time;
        Ok(&self.state)
    }

    pub fn read_encoders(&mut self) -> EncoderFrame {
        let mut d = self.state.d_true.clone();
        if self.config.encoder_noise_std > 0.0 {
            let normal = Normal::new(0.0, self.config.encoder_noise_std)
                .expect("validated noise level");
            for v in d.iter_mut() {
                *v += normal.sample(&mut self.rng);
            }
        }
        let q = self.config.encoder_quantum;
        if q > 0.0 {
            for v in d.iter_mut() {
                *v = libm::round(*v / q) * q;
            }
        }
        EncoderFrame { time: self.state.time, d_real: d }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::default_triforce;
    use approx::assert_relative_eq;

    fn triforce() -> (Truss, Configuration) {
        let (topo, x) = default_triforce(1.0);
        (Truss::new(topo).unwrap(), x)
    }

    fn cmd(v: [f64; 6]) -> DVector<f64> {
        DVector::from_row_slice(&v)
    }

    #[test]
    fn ideal_plant_follows_command() {
        let (truss, x) = triforce();
        let mut plant = Plant::new(&truss, PlantConfig::ideal(6), x).unwrap();
        let c = cmd([0.02, -0.01, 0.03, 0.0, -0.02, 0.01]);
        plant.apply_command(&c, 0.5).unwrap();
        assert_eq!(plant.state().d_true, &c * 0.5);
        assert_eq!(plant.read_encoders().d_real, plant.state().d_true);
        assert_eq!(plant.state().time, 0.5);
    }

    #[test]
    fn failed_roller_never_moves() {
        let (truss, x) = triforce();
        let mut cfg = PlantConfig::ideal(6);
        cfg.failed.insert(3);
        let mut plant = Plant::new(&truss, cfg, x).unwrap();
        for k in 0..5 {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            plant.apply_command(&cmd([0.01, 0.0, 0.0, 0.05 * s, 0.0, 0.0]), 0.5).unwrap();
            assert_eq!(plant.state().d_true[3], 0.0);
        }
    }

    #[test]
    fn slow_roller_gain() {
        let (truss, x) = triforce();
        let mut cfg = PlantConfig::ideal(6);
        cfg.gains[5] = 1.0 / 1.5;
        let mut plant = Plant::new(&truss, cfg, x).unwrap();
        plant.apply_command(&cmd([0.0, 0.0, 0.0, 0.0, 0.0, 0.03]), 0.5).unwrap();
        assert_relative_eq!(plant.state().d_true[5], 0.01, epsilon = 1e-15);
    }

    #[test]
    fn perimeters_constant_in_ground_truth() {
        let (truss, x) = triforce();
        let p0 = truss.perimeters(&x).unwrap();
        let mut plant = Plant::new(&truss, PlantConfig::ideal(6), x).unwrap();
        for _ in 0..10 {
            plant.apply_command(&cmd([0.01, 0.02, -0.01, 0.01, 0.0, -0.02]), 0.5).unwrap();
            let p = truss.perimeters(&plant.state().x_true).unwrap();
            assert!((p - &p0).amax() <= 1e-6);
        }
    }

    #[test]
    fn quantized_readings() {
        let (truss, x) = triforce();
        let mut cfg = PlantConfig::ideal(6);
        cfg.encoder_quantum = 1e-4;
        cfg.encoder_noise_std = 3e-4;
        let mut plant = Plant::new(&truss, cfg, x).unwrap();
        plant.apply_command(&cmd([0.0123, -0.004, 0.0, 0.0, 0.001, 0.0]), 0.5).unwrap();
        for _ in 0..50 {
            for v in plant.read_encoders().d_real.iter() {
                let q = v / 1e-4;
                assert!((q - libm::round(q)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn noise_level_and_determinism() {
        let (truss, x) = triforce();
        let mut cfg = PlantConfig::ideal(6);
        cfg.encoder_noise_std = 1e-3;
        cfg.seed = 42;
        let mut a = Plant::new(&truss, cfg.clone(), x.clone()).unwrap();
        let mut b = Plant::new(&truss, cfg, x).unwrap();
        let mut samples = alloc::vec::Vec::new();
        for _ in 0..10_000 {
            let fa = a.read_encoders();
            assert_eq!(fa, b.read_encoders());
            samples.push(fa.d_real[0]);
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
        let std = libm::sqrt(var);
        assert!((std - 1e-3).abs() <= 0.05e-3, "std {std}");
    }

    #[test]
    fn rejects_bad_config() {
        let (truss, x) = triforce();
        let mut cfg = PlantConfig::ideal(6);
        cfg.gains[0] = -1.0;
        assert!(Plant::new(&truss, cfg, x.clone()).is_err());
        let mut cfg = PlantConfig::ideal(6);
        cfg.failed.insert(6);
        assert!(Plant::new(&truss, cfg, x).is_err());
    }
}
