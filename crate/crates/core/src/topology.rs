//! Graph description of an isoperimetric truss: vertices, edges, triangular
//! modules, roller wiring and the fixed degrees of freedom.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::Configuration;

/// A roller unit mounted on a triangle vertex.
///
/// Active rollers drive tube material between `edge_plus` and `edge_minus`:
/// positive roller velocity lengthens `edge_plus` and shortens `edge_minus`.
/// Passive rollers only anchor the tube ends and carry no actuation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roller {
    pub triangle: usize,
    pub vertex: usize,
    pub edge_plus: usize,
    pub edge_minus: usize,
    pub active: bool,
}

/// One constrained coordinate: `axis` of vertex `vertex` is held still.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FixedDof {
    pub vertex: usize,
    pub axis: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrussTopology {
    pub dimension: usize,
    pub vertex_count: usize,
    pub edges: Vec<[usize; 2]>,
    /// Each triangle lists the indices of its three edges.
    pub triangles: Vec<[usize; 3]>,
    pub rollers: Vec<Roller>,
    pub fixed_dofs: Vec<FixedDof>,
}

impl TrussTopology {
    /// Checks every structural invariant and returns the topology unchanged.
    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: alloc::string::String| Err(Error::InvalidTopology(msg));
        if self.dimension < 2 {
            return invalid(format!("dimension must be at least 2, got {}", self.dimension));
        }
        for (k, &[i, j]) in self.edges.iter().enumerate() {
            if i >= self.vertex_count || j >= self.vertex_count {
                return invalid(format!("edge {k} references a missing vertex"));
            }
            if i == j {
                return invalid(format!("edge {k} is a self loop"));
            }
        }

        let mut owner = alloc::vec![None; self.edges.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let mut verts = BTreeSet::new();
            for &e in tri {
                let Some(&[i, j]) = self.edges.get(e) else {
                    return invalid(format!("triangle {t} references missing edge {e}"));
                };
                if let Some(other) = owner[e] {
                    return invalid(format!("edge {e} belongs to triangles {other} and {t}"));
                }
                owner[e] = Some(t);
                verts.insert(i);
                verts.insert(j);
            }
            let distinct: BTreeSet<_> = tri.iter().collect();
            if distinct.len() != 3 || verts.len() != 3 {
                return invalid(format!("triangle {t} is not a 3-cycle"));
            }
        }

        let mut active_per_triangle = alloc::vec![Vec::new(); self.triangles.len()];
        for (r, roller) in self.rollers.iter().enumerate() {
            let Some(tri) = self.triangles.get(roller.triangle) else {
                return invalid(format!("roller {r} references missing triangle"));
            };
            if roller.edge_plus == roller.edge_minus {
                return invalid(format!("roller {r} uses the same edge twice"));
            }
            if !tri.contains(&roller.edge_plus) || !tri.contains(&roller.edge_minus) {
                return invalid(format!("roller {r} edges are not in triangle {}", roller.triangle));
            }
            let [a, b] = self.edges[roller.edge_plus];
            let [c, d] = self.edges[roller.edge_minus];
            let shared = if a == c || a == d {
                a
            } else if b == c || b == d {
                b
            } else {
                return invalid(format!("roller {r} edges share no vertex"));
            };
            if shared != roller.vertex {
                return invalid(format!("roller {r} is not mounted where its edges meet"));
            }
            if roller.active {
                active_per_triangle[roller.triangle].push(roller.vertex);
            }
        }
        for (t, mounts) in active_per_triangle.iter().enumerate() {
            let distinct: BTreeSet<_> = mounts.iter().collect();
            if mounts.len() != 2 || distinct.len() != 2 {
                return invalid(format!(
                    "triangle {t} needs two active rollers on distinct vertices"
                ));
            }
        }

        let d = self.dimension;
        let unique: BTreeSet<_> = self.fixed_dofs.iter().collect();
        if unique.len() != self.fixed_dofs.len() {
            return invalid("duplicate fixed degree of freedom".into());
        }
        for f in &self.fixed_dofs {
            if f.vertex >= self.vertex_count || f.axis >= d {
                return invalid(format!("fixed dof ({}, {}) out of range", f.vertex, f.axis));
            }
        }
        if self.fixed_dofs.len() != d * (d + 1) / 2 {
            return invalid(format!(
                "expected {} fixed dofs to remove rigid motions, got {}",
                d * (d + 1) / 2,
                self.fixed_dofs.len()
            ));
        }
        Ok(())
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Number of active rollers; roller indices everywhere else refer to this
    /// ordering.
    pub fn roller_count(&self) -> usize {
        self.rollers.iter().filter(|r| r.active).count()
    }

    pub fn active_rollers(&self) -> impl Iterator<Item = &Roller> + '_ {
        self.rollers.iter().filter(|r| r.active)
    }

    /// Length of a stacked configuration vector.
    pub fn coordinate_count(&self) -> usize {
        self.vertex_count * self.dimension
    }

    /// Dimension of the rigid-body motion space (3 in the plane, 6 in space).
    pub fn rigid_modes(&self) -> usize {
        self.dimension * (self.dimension + 1) / 2
    }

    /// Vertices whose every coordinate is fixed.
    pub fn fully_fixed_vertices(&self) -> BTreeSet<usize> {
        (0..self.vertex_count)
            .filter(|&v| {
                (0..self.dimension)
                    .all(|a| self.fixed_dofs.contains(&FixedDof { vertex: v, axis: a }))
            })
            .collect()
    }

    /// The three vertices of triangle `t`.
    pub fn triangle_vertices(&self, t: usize) -> [usize; 3] {
        let mut v: Vec<usize> = self.triangles[t]
            .iter()
            .flat_map(|&e| self.edges[e])
            .collect();
        v.sort_unstable();
        v.dedup();
        [v[0], v[1], v[2]]
    }

    pub fn check_vertex(&self, v: usize) -> Result<()> {
        if v < self.vertex_count {
            Ok(())
        } else {
            Err(Error::UnknownVertex(v))
        }
    }

    pub fn check_roller(&self, r: usize) -> Result<()> {
        if r < self.roller_count() {
            Ok(())
        } else {
            Err(Error::UnknownRoller(r))
        }
    }
}

/// The planar three-module "triforce" testbed: an equilateral outer triangle
/// of side `2 * side` split at its edge midpoints into three corner modules
/// of side `side`.
///
/// Vertices: 0 bottom-left, 1 bottom midpoint, 2 bottom-right, 3 right
/// midpoint, 4 apex, 5 left midpoint. Vertex 0 is pinned in both axes and
/// vertex 2 in y. Each corner module carries its two active rollers on the
/// midpoint vertices, and the outer corner is the passive anchor.
pub fn default_triforce(side: f64) -> (TrussTopology, Configuration) {
    let h = libm::sqrt(3.0) / 2.0 * side;
    let positions = DVector::from_vec(alloc::vec![
        0.0,
        0.0,
        side,
        0.0,
        2.0 * side,
        0.0,
        1.5 * side,
        h,
        side,
        2.0 * h,
        0.5 * side,
        h,
    ]);
    let edges = alloc::vec![
        [0, 1],
        [1, 5],
        [0, 5],
        [1, 2],
        [2, 3],
        [1, 3],
        [3, 4],
        [4, 5],
        [3, 5],
    ];
    let triangles = alloc::vec![[0, 1, 2], [3, 4, 5], [6, 7, 8]];
    let roller = |triangle, vertex, edge_plus, edge_minus| Roller {
        triangle,
        vertex,
        edge_plus,
        edge_minus,
        active: true,
    };
    let rollers = alloc::vec![
        roller(0, 1, 0, 1),
        roller(0, 5, 1, 2),
        roller(1, 1, 3, 5),
        roller(1, 3, 4, 5),
        roller(2, 3, 6, 8),
        roller(2, 5, 7, 8),
    ];
    let fixed_dofs = alloc::vec![
        FixedDof { vertex: 0, axis: 0 },
        FixedDof { vertex: 0, axis: 1 },
        FixedDof { vertex: 2, axis: 1 },
    ];
    let topo = TrussTopology {
        dimension: 2,
        vertex_count: 6,
        edges,
        triangles,
        rollers,
        fixed_dofs,
    };
    (topo, Configuration::new(positions, 0.0))
}

/// Apex vertex of [`default_triforce`], the default target.
pub const TRIFORCE_APEX: usize = 4;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_triforce_is_valid() {
        let (topo, x) = default_triforce(1.0);
        topo.validate().unwrap();
        assert_eq!(topo.roller_count(), 6);
        assert_eq!(topo.edge_count(), 9);
        assert_eq!(x.positions.len(), 12);
        assert_eq!(topo.fully_fixed_vertices().into_iter().collect::<Vec<_>>(), [0]);
        assert_eq!(topo.triangle_vertices(2), [3, 4, 5]);
    }

    #[test]
    fn shared_edge_is_rejected() {
        let (mut topo, _) = default_triforce(1.0);
        topo.triangles[1] = [0, 4, 5];
        assert!(matches!(topo.validate(), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn roller_outside_its_triangle_is_rejected() {
        let (mut topo, _) = default_triforce(1.0);
        topo.rollers[0].edge_minus = 3;
        assert!(topo.validate().is_err());
    }

    #[test]
    fn missing_fixed_dof_is_rejected() {
        let (mut topo, _) = default_triforce(1.0);
        topo.fixed_dofs.pop();
        assert!(topo.validate().is_err());
    }

    #[test]
    fn three_active_rollers_in_one_triangle_is_rejected() {
        let (mut topo, _) = default_triforce(1.0);
        topo.rollers.push(Roller {
            triangle: 0,
            vertex: 0,
            edge_plus: 0,
            edge_minus: 2,
            active: true,
        });
        assert!(topo.validate().is_err());
        topo.rollers.last_mut().unwrap().active = false;
        topo.validate().unwrap();
        assert_eq!(topo.roller_count(), 6);
    }
}
