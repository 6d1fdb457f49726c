//! Scenario execution.

use std::time::Instant;

use isotruss_core::controller::Clock;
use isotruss_core::sim::Simulation;

use crate::error::Result;
use crate::runlog::RunLog;
use crate::scenario::Scenario;

/// Seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        WallClock(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Runs the scenario to completion. A fatal controller or plant error ends
/// the run early; the log then carries the records so far and the error in
/// its header.
pub fn run_scenario(scenario: &Scenario, clock: &dyn Clock) -> Result<RunLog> {
    let setup = scenario.setup()?;
    let d = setup.truss.dimension();
    let target = setup.spec.target_vertex;
    let dt = setup.spec.dt();
    let sim = Simulation::new(&setup.truss, setup.spec, setup.plant, setup.sim, setup.home)?;
    let outcome = sim.run(clock);
    Ok(RunLog::from_outcome(scenario, target, d, dt, &outcome))
}
