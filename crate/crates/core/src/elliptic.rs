//! Cell-centered Poisson solves with per-side Dirichlet/Neumann closures.
//!
//! The assembled matrix is `-Wc D G0` (five-point, symmetric positive
//! definite whenever one side is Dirichlet); boundary data enters the load.

use crate::error::{Error, Result};
use crate::grid::{gradient_bc, BcKinds, Boundary, Grid2D, ScalarBc, ScalarField, SideKind, Stagger};
use crate::sparse::{LinearSolver, SparseMatrix, Triplets};

#[derive(Debug)]
pub struct EllipticSolver {
    pub grid: Grid2D,
    pub kinds: BcKinds,
    solver: LinearSolver,
}

impl EllipticSolver {
    pub fn new(grid: Grid2D, kinds: BcKinds) -> Result<Self> {
        if !kinds.has_dirichlet() {
            return Err(Error::Assembly("pure Neumann scalar problem has no unique solution".into()));
        }
        let a = assemble(&grid, &kinds)?;
        let solver = LinearSolver::new(a, true, "scalar elliptic solve")?;
        Ok(EllipticSolver { grid, kinds, solver })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        self.solver.matrix()
    }

    /// Solve `lap_h p = rhs` with the given boundary data.
    pub fn solve(&self, rhs: &ScalarField, bc: &ScalarBc) -> Result<ScalarField> {
        if rhs.stagger != Stagger::Cell {
            return Err(Error::StaggerMismatch { expected: "cell", got: rhs.stagger.name() });
        }
        if bc.kinds != self.kinds {
            return Err(Error::GridMismatch("boundary kinds differ from the assembled solver".into()));
        }
        let g = &self.grid;
        let vol = g.dx * g.dz;
        let mut load: Vec<f64> = rhs.data.iter().map(|r| -vol * r).collect();
        for b in Boundary::ALL {
            let data = bc.side(b);
            let kind = self.kinds.get(b);
            for (k, &d) in data.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let (c, area, h) = boundary_cell(g, b, k);
                load[c] += match kind {
                    SideKind::Dirichlet => 2.0 * area / h * d,
                    SideKind::Neumann => area * d,
                };
            }
        }
        let p = self.solver.solve(&load)?;
        Ok(ScalarField { grid: *g, stagger: Stagger::Cell, data: p })
    }

    /// Solve `A p = load` with the raw assembled matrix.
    pub fn solve_load(&self, load: &[f64]) -> Result<Vec<f64>> {
        self.solver.solve(load)
    }

    /// Gradient of a solution under this solver's closure.
    pub fn gradient(&self, p: &ScalarField, bc: &ScalarBc) -> Result<crate::grid::VectorField> {
        gradient_bc(p, bc)
    }
}

/// Cell index, face area and normal spacing for boundary face `k` of a side.
fn boundary_cell(g: &Grid2D, b: Boundary, k: usize) -> (usize, f64, f64) {
    match b {
        Boundary::Inflow => (g.cell(0, k), g.dz, g.dx),
        Boundary::Outflow => (g.cell(g.nx - 1, k), g.dz, g.dx),
        Boundary::Bottom => (g.cell(k, 0), g.dx, g.dz),
        Boundary::Top => (g.cell(k, g.nz - 1), g.dx, g.dz),
    }
}

fn assemble(g: &Grid2D, kinds: &BcKinds) -> Result<SparseMatrix> {
    let n = g.n_cells();
    let mut t = Triplets::new(n, n);
    let tx = g.dz / g.dx;
    let tz = g.dx / g.dz;
    for j in 0..g.nz {
        for i in 0..g.nx {
            let c = g.cell(i, j);
            if i + 1 < g.nx {
                let e = g.cell(i + 1, j);
                t.push(c, c, tx);
                t.push(e, e, tx);
                t.push(c, e, -tx);
                t.push(e, c, -tx);
            }
            if j + 1 < g.nz {
                let nb = g.cell(i, j + 1);
                t.push(c, c, tz);
                t.push(nb, nb, tz);
                t.push(c, nb, -tz);
                t.push(nb, c, -tz);
            }
        }
    }
    for b in Boundary::ALL {
        if kinds.get(b) == SideKind::Dirichlet {
            for k in 0..g.side_len(b) {
                let (c, area, h) = boundary_cell(g, b, k);
                t.push(c, c, 2.0 * area / h);
            }
        }
    }
    t.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::laplacian;
    use std::f64::consts::PI;

    #[test]
    fn zero_rhs_gives_zero() {
        let g = Grid2D::new(8, 6, 2.0).unwrap();
        let s = EllipticSolver::new(g, BcKinds::ALL_DIRICHLET).unwrap();
        let p = s
            .solve(&ScalarField::zeros(g, Stagger::Cell), &ScalarBc::homogeneous(&g, BcKinds::ALL_DIRICHLET))
            .unwrap();
        assert!(p.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pure_neumann_is_rejected() {
        let g = Grid2D::new(8, 6, 2.0).unwrap();
        let k = BcKinds { outflow: SideKind::Neumann, ..BcKinds::MIXED };
        assert!(EllipticSolver::new(g, k).is_err());
    }

    #[test]
    fn assembled_matrix_is_symmetric() {
        let g = Grid2D::new(7, 5, 1.5).unwrap();
        let s = EllipticSolver::new(g, BcKinds::MIXED).unwrap();
        assert!(s.matrix().asymmetry() < 1e-12);
    }

    #[test]
    fn solution_satisfies_discrete_equation_with_data() {
        let g = Grid2D::new(10, 8, 2.0).unwrap();
        let s = EllipticSolver::new(g, BcKinds::MIXED).unwrap();
        let rhs = ScalarField::from_fn(g, Stagger::Cell, |x, z| x * z - 0.3);
        let mut bc = ScalarBc::homogeneous(&g, BcKinds::MIXED);
        for k in 0..g.nz {
            bc.inflow[k] = 0.2 * g.zc(k);
            bc.outflow[k] = (g.zc(k) * 3.0).cos();
        }
        for k in 0..g.nx {
            bc.top[k] = -0.5 + g.xc(k);
        }
        let p = s.solve(&rhs, &bc).unwrap();
        let l = laplacian(&p, &bc).unwrap();
        let err = l.data.iter().zip(&rhs.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn manufactured_dirichlet_solution_converges_at_second_order() {
        let len = 2.0;
        let err = |n: usize| {
            let g = Grid2D::new(2 * n, n, len).unwrap();
            let exact = |x: f64, z: f64| (PI * x / len).sin() * (PI * z).sin();
            let k2 = PI * PI * (1.0 / (len * len) + 1.0);
            let rhs = ScalarField::from_fn(g, Stagger::Cell, |x, z| -k2 * exact(x, z));
            let s = EllipticSolver::new(g, BcKinds::ALL_DIRICHLET).unwrap();
            let p = s.solve(&rhs, &ScalarBc::homogeneous(&g, BcKinds::ALL_DIRICHLET)).unwrap();
            let e = ScalarField::from_fn(g, Stagger::Cell, exact);
            let d = ScalarField { data: p.data.iter().zip(&e.data).map(|(a, b)| a - b).collect(), ..p };
            d.norm()
        };
        let order = (err(16) / err(32)).log2();
        assert!(order >= 1.9, "order {order}");
    }
}
