//! JSON scenario files: schema, defaults, validation with field paths, and
//! conversion into the core simulation types.

use std::collections::BTreeSet;

use isotruss_core::analysis::{WorkspaceMode, WorkspaceOptions};
use isotruss_core::barrier::{barrier, BarrierParams};
use isotruss_core::controller::{ControlMode, ControlSpec};
use isotruss_core::estimator::VelocityFilter;
use isotruss_core::plant::{PlantConfig, GROUND_TRUTH_SUBSTEPS};
use isotruss_core::sim::{FailureEvent, SimConfig};
use isotruss_core::topology::{default_triforce, FixedDof, Roller, TrussTopology};
use isotruss_core::{Configuration, Truss};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{SchemaError, SchemaErrorKind, SchemaErrors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub truss: TrussSpec,
    pub control: ControlSection,
    pub path: PathSection,
    pub plant: PlantSection,
    pub estimator: EstimatorSection,
    pub analysis: AnalysisSection,
    /// Where `run` writes its log when no `--out` is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            truss: TrussSpec::default(),
            control: ControlSection::default(),
            path: PathSection::default(),
            plant: PlantSection::default(),
            estimator: EstimatorSection::default(),
            analysis: AnalysisSection::default(),
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrussSpec {
    DefaultTriforce {
        #[serde(default = "unit")]
        side: f64,
    },
    Custom {
        topology: TopologySpec,
        /// Stacked vertex coordinates of the home pose.
        positions: Vec<f64>,
    },
}

impl Default for TrussSpec {
    fn default() -> Self {
        TrussSpec::DefaultTriforce { side: 1.0 }
    }
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub dimension: usize,
    pub vertex_count: usize,
    pub edges: Vec<[usize; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub rollers: Vec<RollerSpec>,
    pub fixed_dofs: Vec<FixedDofSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollerSpec {
    pub triangle: usize,
    pub vertex: usize,
    pub edge_plus: usize,
    pub edge_minus: usize,
    #[serde(default = "yes")]
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedDofSpec {
    pub vertex: usize,
    pub axis: usize,
}

fn yes() -> bool {
    true
}

impl From<&TopologySpec> for TrussTopology {
    fn from(t: &TopologySpec) -> Self {
        TrussTopology {
            dimension: t.dimension,
            vertex_count: t.vertex_count,
            edges: t.edges.clone(),
            triangles: t.triangles.clone(),
            rollers: t
                .rollers
                .iter()
                .map(|r| Roller {
                    triangle: r.triangle,
                    vertex: r.vertex,
                    edge_plus: r.edge_plus,
                    edge_minus: r.edge_minus,
                    active: r.active,
                })
                .collect(),
            fixed_dofs: t.fixed_dofs.iter().map(|f| FixedDof { vertex: f.vertex, axis: f.axis }).collect(),
        }
    }
}

impl From<&TrussTopology> for TopologySpec {
    fn from(t: &TrussTopology) -> Self {
        TopologySpec {
            dimension: t.dimension,
            vertex_count: t.vertex_count,
            edges: t.edges.clone(),
            triangles: t.triangles.clone(),
            rollers: t
                .rollers
                .iter()
                .map(|r| RollerSpec {
                    triangle: r.triangle,
                    vertex: r.vertex,
                    edge_plus: r.edge_plus,
                    edge_minus: r.edge_minus,
                    active: r.active,
                })
                .collect(),
            fixed_dofs: t.fixed_dofs.iter().map(|f| FixedDofSpec { vertex: f.vertex, axis: f.axis }).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OpenLoop,
    ClosedLoop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub target_vertex: usize,
    /// m/s
    pub speed_limit: f64,
    pub k_f: f64,
    pub mode: Mode,
    pub failure_aware: bool,
    /// Control period (s).
    pub dt: f64,
    /// Euler substeps per control step in the controller's model.
    pub substeps: usize,
    pub barrier: BarrierSection,
}

impl Default for ControlSection {
    fn default() -> Self {
        let spec = ControlSpec::new(isotruss_core::topology::TRIFORCE_APEX, DVector::zeros(2));
        Self {
            target_vertex: spec.target_vertex,
            speed_limit: spec.speed_limit,
            k_f: spec.k_f,
            mode: Mode::OpenLoop,
            failure_aware: spec.failure_aware,
            dt: spec.barrier.dt,
            substeps: spec.barrier.substeps,
            barrier: BarrierSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierSection {
    pub enabled: bool,
    pub alpha: f64,
    pub sigma_min: f64,
}

impl Default for BarrierSection {
    fn default() -> Self {
        let p = BarrierParams::default();
        Self { enabled: true, alpha: p.alpha, sigma_min: p.sigma_min }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathSection {
    pub waypoints: Vec<Vec<f64>>,
    /// Waypoints are offsets from the target vertex's home position.
    pub relative_to_home: bool,
    pub goal_tolerance: f64,
    pub waypoint_budget: usize,
    pub timed: bool,
    pub max_steps: usize,
}

impl Default for PathSection {
    fn default() -> Self {
        let c = SimConfig::default();
        Self {
            waypoints: Vec::new(),
            relative_to_home: false,
            goal_tolerance: c.goal_tolerance,
            waypoint_budget: c.waypoint_budget,
            timed: c.timed,
            max_steps: c.max_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureSpec {
    pub roller: usize,
    /// Activation time (s).
    pub time: f64,
    #[serde(default = "yes")]
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    /// One gain per roller; all ones when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<f64>>,
    pub failures: Vec<FailureSpec>,
    pub encoder_noise_std: f64,
    pub encoder_quantum: f64,
    pub seed: u64,
    pub substeps: usize,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            gains: None,
            failures: Vec::new(),
            encoder_noise_std: 0.0,
            encoder_quantum: 0.0,
            seed: 0,
            substeps: GROUND_TRUTH_SUBSTEPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterSpec {
    #[default]
    None,
    Sliding {
        window: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub filter: FilterSpec,
    pub detect_failures: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Dtcbf,
    Hard,
}

impl From<SweepMode> for WorkspaceMode {
    fn from(m: SweepMode) -> Self {
        match m {
            SweepMode::Dtcbf => WorkspaceMode::Dtcbf,
            SweepMode::Hard => WorkspaceMode::HardThreshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub rays: usize,
    pub radial_step: f64,
    pub max_radius: f64,
    pub mode: SweepMode,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let o = WorkspaceOptions::default();
        Self { rays: o.n_rays, radial_step: o.radial_step, max_radius: o.max_radius, mode: SweepMode::Dtcbf }
    }
}

/// Core objects built from a validated scenario.
#[derive(Debug, Clone)]
pub struct Setup {
    pub truss: Truss,
    pub home: Configuration,
    pub spec: ControlSpec,
    pub plant: PlantConfig,
    pub sim: SimConfig,
    pub workspace: WorkspaceOptions,
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, SchemaErrors> {
    let mut de = serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        SchemaErrors(vec![classify(path, e.inner())])
    })?;
    de.end().map_err(|e| SchemaErrors(vec![classify(".".into(), &e)]))?;
    scenario.setup()?;
    Ok(scenario)
}

fn classify(path: String, e: &serde_json::Error) -> SchemaError {
    use serde_json::error::Category;
    let message = e.to_string();
    let kind = match e.classify() {
        Category::Syntax | Category::Eof | Category::Io => SchemaErrorKind::Syntax,
        Category::Data if message.starts_with("unknown field") => SchemaErrorKind::UnknownField,
        Category::Data => SchemaErrorKind::TypeMismatch,
    };
    SchemaError { path, kind, message }
}

struct Collector(Vec<SchemaError>);

impl Collector {
    fn check(&mut self, ok: bool, path: impl Into<String>, message: impl Into<String>) -> bool {
        if !ok {
            self.0.push(SchemaError { path: path.into(), kind: SchemaErrorKind::Invariant, message: message.into() });
        }
        ok
    }

    fn finish(self) -> Result<(), SchemaErrors> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(SchemaErrors(self.0))
        }
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

fn nonnegative(v: f64) -> bool {
    v >= 0.0 && v.is_finite()
}

impl Scenario {
    /// Pretty JSON; parsing it back yields an equal scenario.
    pub fn print(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(bytes))
    }

    fn build_truss(&self) -> Result<(Truss, Configuration), SchemaErrors> {
        let invalid = |path: &str, msg: String| SchemaErrors::single(path, SchemaErrorKind::Invariant, msg);
        let (topology, home) = match &self.truss {
            TrussSpec::DefaultTriforce { side } => {
                if !positive(*side) {
                    return Err(invalid("truss.side", "side must be positive".into()));
                }
                default_triforce(*side)
            }
            TrussSpec::Custom { topology, positions } => {
                let topology = TrussTopology::from(topology);
                topology.validate().map_err(|e| invalid("truss.topology", e.to_string()))?;
                let want = topology.dimension * topology.vertex_count;
                if positions.len() != want {
                    return Err(invalid("truss.positions", format!("expected {want} coordinates, found {}", positions.len())));
                }
                if positions.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("truss.positions", "coordinates must be finite".into()));
                }
                (topology, Configuration::new(DVector::from_column_slice(positions), 0.0))
            }
        };
        let truss = Truss::new(topology).map_err(|e| invalid("truss", e.to_string()))?;
        truss.edge_lengths(&home).map_err(|e| invalid("truss.positions", e.to_string()))?;
        Ok((truss, home))
    }

    /// Validates every field and builds the core objects.
    pub fn setup(&self) -> Result<Setup, SchemaErrors> {
        let (truss, home) = self.build_truss()?;
        let topo = truss.topology();
        let d = topo.dimension;
        let rollers = truss.roller_count();
        let mut c = Collector(Vec::new());

        let ctl = &self.control;
        if c.check(ctl.target_vertex < topo.vertex_count, "control.target_vertex", "no such vertex") {
            c.check(
                !topo.fully_fixed_vertices().contains(&ctl.target_vertex),
                "control.target_vertex",
                "target vertex is fully fixed",
            );
        }
        c.check(positive(ctl.speed_limit), "control.speed_limit", "must be positive");
        c.check(ctl.k_f.is_finite(), "control.k_f", "must be finite");
        c.check(positive(ctl.dt), "control.dt", "must be positive");
        c.check(ctl.substeps >= 1, "control.substeps", "must be >= 1");
        c.check(
            ctl.barrier.alpha > 0.0 && ctl.barrier.alpha < 1.0,
            "control.barrier.alpha",
            "must lie in (0, 1)",
        );
        c.check(nonnegative(ctl.barrier.sigma_min), "control.barrier.sigma_min", "must be >= 0");

        let path = &self.path;
        for (i, w) in path.waypoints.iter().enumerate() {
            c.check(w.len() == d, format!("path.waypoints[{i}]"), format!("expected {d} coordinates"));
            c.check(w.iter().all(|v| v.is_finite()), format!("path.waypoints[{i}]"), "must be finite");
        }
        c.check(positive(path.goal_tolerance), "path.goal_tolerance", "must be positive");
        c.check(path.waypoint_budget >= 1, "path.waypoint_budget", "must be >= 1");

        let plant = &self.plant;
        if let Some(g) = &plant.gains {
            if c.check(g.len() == rollers, "plant.gains", format!("expected {rollers} gains, found {}", g.len())) {
                for (i, v) in g.iter().enumerate() {
                    c.check(nonnegative(*v), format!("plant.gains[{i}]"), "must be finite and >= 0");
                }
            }
        }
        for (i, f) in plant.failures.iter().enumerate() {
            c.check(f.roller < rollers, format!("plant.failures[{i}].roller"), format!("no roller {}", f.roller));
            c.check(nonnegative(f.time), format!("plant.failures[{i}].time"), "activation time must be >= 0");
        }
        c.check(nonnegative(plant.encoder_noise_std), "plant.encoder_noise_std", "must be >= 0");
        c.check(nonnegative(plant.encoder_quantum), "plant.encoder_quantum", "must be >= 0");
        c.check(plant.substeps >= 1, "plant.substeps", "must be >= 1");

        if let FilterSpec::Sliding { window } = self.estimator.filter {
            c.check(window >= 1, "estimator.filter.window", "must be >= 1");
        }

        let a = &self.analysis;
        c.check(a.rays >= 3, "analysis.rays", "must be >= 3");
        c.check(positive(a.radial_step), "analysis.radial_step", "must be positive");
        c.check(positive(a.max_radius), "analysis.max_radius", "must be positive");
        c.finish()?;

        let params = BarrierParams { sigma_min: ctl.barrier.sigma_min, alpha: ctl.barrier.alpha, dt: ctl.dt, substeps: ctl.substeps };
        if ctl.barrier.enabled {
            let h = barrier(&truss, &home, &params).map_err(|e| SchemaErrors::single("truss", SchemaErrorKind::Invariant, e.to_string()))?.h;
            if h < 0.0 {
                return Err(SchemaErrors::single(
                    "control.barrier.sigma_min",
                    SchemaErrorKind::Invariant,
                    format!("home pose violates the barrier (h = {h:e})"),
                ));
            }
        }

        let origin = truss.vertex_position(&home, ctl.target_vertex);
        let waypoints: Vec<DVector<f64>> = path
            .waypoints
            .iter()
            .map(|w| {
                let p = DVector::from_column_slice(w);
                if path.relative_to_home {
                    p + &origin
                } else {
                    p
                }
            })
            .collect();
        let spec = ControlSpec {
            speed_limit: ctl.speed_limit,
            k_f: ctl.k_f,
            broken_rollers: BTreeSet::new(),
            barrier: params,
            barrier_enabled: ctl.barrier.enabled,
            mode: match ctl.mode {
                Mode::OpenLoop => ControlMode::OpenLoop,
                Mode::ClosedLoop => ControlMode::ClosedLoop,
            },
            failure_aware: ctl.failure_aware,
            ..ControlSpec::new(ctl.target_vertex, waypoints.first().cloned().unwrap_or_else(|| origin.clone()))
        };
        let plant_config = PlantConfig {
            gains: plant.gains.as_ref().map_or_else(|| DVector::from_element(rollers, 1.0), |g| DVector::from_column_slice(g)),
            failed: BTreeSet::new(),
            encoder_noise_std: plant.encoder_noise_std,
            encoder_quantum: plant.encoder_quantum,
            seed: plant.seed,
            substeps: plant.substeps,
        };
        let sim = SimConfig {
            waypoints,
            goal_tolerance: path.goal_tolerance,
            waypoint_budget: path.waypoint_budget,
            timed: path.timed,
            max_steps: path.max_steps,
            failure_schedule: plant
                .failures
                .iter()
                .map(|f| FailureEvent { time: f.time, roller: f.roller, failed: f.failed })
                .collect(),
            filter: match self.estimator.filter {
                FilterSpec::None => VelocityFilter::None,
                FilterSpec::Sliding { window } => VelocityFilter::Sliding { window },
            },
            detect_failures: self.estimator.detect_failures,
        };
        let workspace = WorkspaceOptions {
            n_rays: a.rays,
            radial_step: a.radial_step,
            max_radius: a.max_radius,
            mode: a.mode.into(),
        };
        Ok(Setup { truss, home, spec, plant: plant_config, sim, workspace })
    }
}
