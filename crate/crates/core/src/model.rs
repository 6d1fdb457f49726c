//! Edge lengths, the rigidity matrix, roller actuation and the linear
//! constraint families of the velocity program.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::linalg::pseudo_inverse;
use crate::topology::TrussTopology;

/// Edges shorter than this are treated as collapsed (m).
pub const DEGENERATE_LENGTH: f64 = 1e-6;
/// Largest admissible loop-closure residual in inverse kinematics (m/s).
pub const LOOP_TOLERANCE: f64 = 1e-7;

/// Stacked vertex positions `[p_0; p_1; ...]` in metres plus a timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub positions: DVector<f64>,
    pub time: f64,
}

impl Configuration {
    pub fn new(positions: DVector<f64>, time: f64) -> Self {
        Self { positions, time }
    }

    pub fn vertex(&self, index: usize, dimension: usize) -> DVectorView<'_, f64> {
        self.positions.rows(index * dimension, dimension)
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|v| v.is_finite()) && self.time.is_finite()
    }
}

/// Current and nominal edge lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLengths {
    pub lengths: DVector<f64>,
    pub nominal: DVector<f64>,
}

impl EdgeLengths {
    /// `ΔL = L − L_0`.
    pub fn deviation(&self) -> DVector<f64> {
        &self.lengths - &self.nominal
    }
}

/// Target-vertex velocity request plus the rollers to hold still.
#[derive(Debug, Clone, Copy)]
pub struct MotionRequest<'a> {
    pub target_vertex: usize,
    pub velocity: &'a DVector<f64>,
    pub broken: &'a [usize],
}

/// The linear equality families acting on the vertex velocity.
#[derive(Debug, Clone)]
pub struct ConstraintRows {
    pub motion: DMatrix<f64>,
    pub motion_rhs: DVector<f64>,
    pub fixed: DMatrix<f64>,
    pub loop_closure: DMatrix<f64>,
    pub broken: DMatrix<f64>,
}

/// Largest absolute violation per constraint family.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FamilyResiduals {
    pub motion: f64,
    pub fixed: f64,
    pub loop_closure: f64,
    pub broken: f64,
}

impl FamilyResiduals {
    pub fn max(&self) -> f64 {
        self.motion
            .max(self.fixed)
            .max(self.loop_closure)
            .max(self.broken)
    }
}

fn amax_or_zero(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

impl ConstraintRows {
    /// All families stacked into one system `A ẋ = b`.
    pub fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.motion.ncols();
        let blocks = [&self.motion, &self.fixed, &self.loop_closure, &self.broken];
        let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
        let mut a = DMatrix::zeros(rows, n);
        let mut b = DVector::zeros(rows);
        let mut at = 0;
        for block in blocks {
            a.rows_mut(at, block.nrows()).copy_from(block);
            at += block.nrows();
        }
        b.rows_mut(0, self.motion_rhs.len())
            .copy_from(&self.motion_rhs);
        (a, b)
    }

    pub fn residuals(&self, xdot: &DVector<f64>) -> FamilyResiduals {
        FamilyResiduals {
            motion: amax_or_zero(&(&self.motion * xdot - &self.motion_rhs)),
            fixed: amax_or_zero(&(&self.fixed * xdot)),
            loop_closure: amax_or_zero(&(&self.loop_closure * xdot)),
            broken: amax_or_zero(&(&self.broken * xdot)),
        }
    }
}

fn three_cycles(topology: &TrussTopology) -> Vec<[usize; 3]> {
    let n = topology.vertex_count;
    let mut adjacent = alloc::vec![false; n * n];
    for &[i, j] in &topology.edges {
        adjacent[i * n + j] = true;
        adjacent[j * n + i] = true;
    }
    let mut cycles = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if !adjacent[a * n + b] {
                continue;
            }
            for c in b + 1..n {
                if adjacent[a * n + c] && adjacent[b * n + c] {
                    cycles.push([a, b, c]);
                }
            }
        }
    }
    cycles
}

/// A validated topology with its configuration-independent matrices.
#[derive(Debug, Clone)]
pub struct Truss {
    topology: TrussTopology,
    actuation: DMatrix<f64>,
    actuation_t_pinv: DMatrix<f64>,
    fixed_rows: DMatrix<f64>,
    loop_indicator: DMatrix<f64>,
    cycles: Vec<[usize; 3]>,
}

impl Truss {
    pub fn new(topology: TrussTopology) -> Result<Self> {
        topology.validate()?;
        let n_edges = topology.edge_count();
        let n = topology.coordinate_count();
        let d = topology.dimension;

        let mut actuation = DMatrix::zeros(topology.roller_count(), n_edges);
        for (r, roller) in topology.active_rollers().enumerate() {
            actuation[(r, roller.edge_plus)] = 1.0;
            actuation[(r, roller.edge_minus)] = -1.0;
        }
        let actuation_t_pinv = pseudo_inverse(&actuation.transpose());

        let mut fixed_rows = DMatrix::zeros(topology.fixed_dofs.len(), n);
        for (row, f) in topology.fixed_dofs.iter().enumerate() {
            fixed_rows[(row, f.vertex * d + f.axis)] = 1.0;
        }

        let mut loop_indicator = DMatrix::zeros(topology.triangles.len(), n_edges);
        for (t, tri) in topology.triangles.iter().enumerate() {
            for &e in tri {
                loop_indicator[(t, e)] = 1.0;
            }
        }

        let cycles = three_cycles(&topology);
        Ok(Self {
            topology,
            actuation,
            actuation_t_pinv,
            fixed_rows,
            loop_indicator,
            cycles,
        })
    }

    pub fn topology(&self) -> &TrussTopology {
        &self.topology
    }

    pub fn dimension(&self) -> usize {
        self.topology.dimension
    }

    pub fn roller_count(&self) -> usize {
        self.actuation.nrows()
    }

    fn check_shape(&self, v: &DVector<f64>) -> Result<()> {
        let expected = self.topology.coordinate_count();
        if v.len() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                found: v.len(),
            })
        }
    }

    /// `L_k = ‖p_i − p_j‖` for every edge.
    pub fn edge_lengths(&self, x: &Configuration) -> Result<DVector<f64>> {
        self.check_shape(&x.positions)?;
        let d = self.dimension();
        let p = &x.positions;
        let lengths = DVector::from_iterator(
            self.topology.edges.len(),
            self.topology
                .edges
                .iter()
                .map(|&[i, j]| (p.rows(i * d, d) - p.rows(j * d, d)).norm()),
        );
        if let Some((edge, &length)) = lengths
            .iter()
            .enumerate()
            .find(|(_, l)| !(**l >= DEGENERATE_LENGTH))
        {
            return Err(Error::DegenerateEdge { edge, length });
        }
        Ok(lengths)
    }

    pub fn measure(&self, x: &Configuration, nominal: &DVector<f64>) -> Result<EdgeLengths> {
        Ok(EdgeLengths {
            lengths: self.edge_lengths(x)?,
            nominal: nominal.clone(),
        })
    }

    /// Rigidity matrix `R(x)` with `L̇ = R(x) ẋ`.
    pub fn rigidity_matrix(&self, x: &Configuration) -> Result<DMatrix<f64>> {
        let lengths = self.edge_lengths(x)?;
        let d = self.dimension();
        let p = &x.positions;
        let mut r = DMatrix::zeros(self.topology.edges.len(), p.len());
        for (k, &[i, j]) in self.topology.edges.iter().enumerate() {
            let unit = (p.rows(i * d, d) - p.rows(j * d, d)) / lengths[k];
            for a in 0..d {
                r[(k, i * d + a)] = unit[a];
                r[(k, j * d + a)] = -unit[a];
            }
        }
        Ok(r)
    }

    /// Signed roller-to-edge matrix `B` with `L̇ = Bᵀ ḋ`.
    pub fn actuation_matrix(&self) -> &DMatrix<f64> {
        &self.actuation
    }

    /// Left pseudo-inverse `(Bᵀ)†`.
    pub fn actuation_pinv(&self) -> &DMatrix<f64> {
        &self.actuation_t_pinv
    }

    /// Selector rows of the fixed degrees of freedom.
    pub fn fixed_rows(&self) -> &DMatrix<f64> {
        &self.fixed_rows
    }

    /// Triangle-by-edge membership indicator.
    pub fn loop_indicator(&self) -> &DMatrix<f64> {
        &self.loop_indicator
    }

    /// Every vertex triple joined pairwise by edges, modules included.
    pub fn three_cycles(&self) -> &[[usize; 3]] {
        &self.cycles
    }

    /// Signed areas of the three-cycles (planar trusses; empty otherwise).
    /// A sign change between two poses means some cycle went collinear.
    pub fn cycle_orientations(&self, x: &Configuration) -> Vec<f64> {
        if self.dimension() != 2 {
            return Vec::new();
        }
        let p = &x.positions;
        self.cycles
            .iter()
            .map(|&[a, b, c]| {
                let (ux, uy) = (p[2 * b] - p[2 * a], p[2 * b + 1] - p[2 * a + 1]);
                let (vx, vy) = (p[2 * c] - p[2 * a], p[2 * c + 1] - p[2 * a + 1]);
                0.5 * (ux * vy - uy * vx)
            })
            .collect()
    }

    pub fn perimeters(&self, x: &Configuration) -> Result<DVector<f64>> {
        Ok(&self.loop_indicator * self.edge_lengths(x)?)
    }

    pub fn vertex_position(&self, x: &Configuration, v: usize) -> DVector<f64> {
        x.vertex(v, self.dimension()).into_owned()
    }

    /// Roller rates `(Bᵀ)† R ẋ` without a loop-closure check.
    pub fn roller_rates(&self, rigidity: &DMatrix<f64>, xdot: &DVector<f64>) -> DVector<f64> {
        &self.actuation_t_pinv * (rigidity * xdot)
    }

    /// Inverse kinematics `ḋ = (Bᵀ)† R(x) ẋ`, rejecting requests whose edge
    /// rates cannot be produced by rollers.
    pub fn inverse_kinematics(
        &self,
        x: &Configuration,
        xdot: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_shape(xdot)?;
        let r = self.rigidity_matrix(x)?;
        let edge_rates = &r * xdot;
        let ddot = &self.actuation_t_pinv * &edge_rates;
        let residual = (self.actuation.transpose() * &ddot - edge_rates).norm();
        if residual > LOOP_TOLERANCE {
            return Err(Error::InfeasibleEdgeRates { residual });
        }
        Ok(ddot)
    }

    /// Builds the motion, fixed, loop-closure and broken-roller rows at `x`.
    pub fn constraint_rows(
        &self,
        x: &Configuration,
        request: MotionRequest<'_>,
    ) -> Result<ConstraintRows> {
        self.topology.check_vertex(request.target_vertex)?;
        for &b in request.broken {
            self.topology.check_roller(b)?;
        }
        let d = self.dimension();
        if request.velocity.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: request.velocity.len(),
            });
        }
        let r = self.rigidity_matrix(x)?;
        let n = r.ncols();

        let mut motion = DMatrix::zeros(d, n);
        for a in 0..d {
            motion[(a, request.target_vertex * d + a)] = 1.0;
        }

        let ik_rows = &self.actuation_t_pinv * &r;
        let broken_rows: Vec<_> = request.broken.iter().map(|&b| ik_rows.row(b)).collect();
        let broken = if broken_rows.is_empty() {
            DMatrix::zeros(0, n)
        } else {
            DMatrix::from_rows(&broken_rows)
        };

        Ok(ConstraintRows {
            motion,
            motion_rhs: request.velocity.clone(),
            fixed: self.fixed_rows.clone(),
            loop_closure: &self.loop_indicator * &r,
            broken,
        })
    }
}
