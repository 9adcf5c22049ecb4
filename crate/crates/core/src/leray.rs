//! Discrete Leray projector onto divergence-free fields with zero normal
//! trace on the Dirichlet part of the boundary.
//!
//! `u = Pi u + grad p_u + grad q_u` where `p_u` solves a homogeneous
//! Dirichlet Poisson problem for `div u` and `q_u` is harmonic with Neumann
//! data `(u - grad p_u) . n` on the Dirichlet part and zero on the outflow.

use crate::elliptic::EllipticSolver;
use crate::error::{Error, Result};
use crate::grid::{divergence, gradient_bc, BcKinds, Boundary, Grid2D, ScalarBc, ScalarField, Stagger, VectorField};

#[derive(Clone, Debug)]
pub struct LerayDecomposition {
    pub input: VectorField,
    pub projected: VectorField,
    pub p_u: ScalarField,
    pub q_u: ScalarField,
    pub grad_p: VectorField,
    pub grad_q: VectorField,
}

impl LerayDecomposition {
    /// `grad p_u + grad q_u`, i.e. `(I - Pi) u`.
    pub fn gradient_part(&self) -> VectorField {
        self.grad_p.add(&self.grad_q)
    }
}

#[derive(Debug)]
pub struct LerayProjector {
    pub grid: Grid2D,
    dirichlet: EllipticSolver,
    mixed: EllipticSolver,
}

impl LerayProjector {
    pub fn new(grid: Grid2D) -> Result<Self> {
        Ok(LerayProjector {
            grid,
            dirichlet: EllipticSolver::new(grid, BcKinds::ALL_DIRICHLET)?,
            mixed: EllipticSolver::new(grid, BcKinds::MIXED)?,
        })
    }

    /// Mixed Neumann (Dirichlet part) / Dirichlet (outflow) solver, shared
    /// with the pressure operators.
    pub fn mixed_solver(&self) -> &EllipticSolver {
        &self.mixed
    }

    pub fn solve_poisson_dirichlet(&self, rhs: &ScalarField) -> Result<ScalarField> {
        self.dirichlet.solve(rhs, &ScalarBc::homogeneous(&self.grid, BcKinds::ALL_DIRICHLET))
    }

    /// Neumann data `(u - grad p_u) . n` on the Dirichlet part, zero on the outflow.
    fn mixed_data(&self, u: &VectorField, grad_p: &VectorField) -> ScalarBc {
        let g = &self.grid;
        let mut bc = ScalarBc::homogeneous(g, BcKinds::MIXED);
        for k in 0..g.nz {
            let f = g.xf(0, k);
            bc.inflow[k] = -(u.u1[f] - grad_p.u1[f]);
        }
        for k in 0..g.nx {
            let b = g.zf(k, 0);
            let t = g.zf(k, g.nz);
            bc.bottom[k] = -(u.u2[b] - grad_p.u2[b]);
            bc.top[k] = u.u2[t] - grad_p.u2[t];
        }
        bc
    }

    pub fn solve_harmonic_mixed(&self, u: &VectorField, p_u: &ScalarField) -> Result<ScalarField> {
        let grad_p = gradient_bc(p_u, &ScalarBc::homogeneous(&self.grid, BcKinds::ALL_DIRICHLET))?;
        let bc = self.mixed_data(u, &grad_p);
        self.mixed.solve(&ScalarField::zeros(self.grid, Stagger::Cell), &bc)
    }

    pub fn project(&self, u: &VectorField) -> Result<LerayDecomposition> {
        if u.grid != self.grid {
            return Err(Error::GridMismatch("field and projector grids differ".into()));
        }
        let p_u = self.solve_poisson_dirichlet(&divergence(u))?;
        let grad_p = gradient_bc(&p_u, &ScalarBc::homogeneous(&self.grid, BcKinds::ALL_DIRICHLET))?;
        let bc = self.mixed_data(u, &grad_p);
        let q_u = self.mixed.solve(&ScalarField::zeros(self.grid, Stagger::Cell), &bc)?;
        let grad_q = gradient_bc(&q_u, &bc)?;
        let mut projected = u.sub(&grad_p);
        projected.axpy(-1.0, &grad_q);
        Ok(LerayDecomposition { input: u.clone(), projected, p_u, q_u, grad_p, grad_q })
    }

    pub fn apply(&self, u: &VectorField) -> Result<VectorField> {
        Ok(self.project(u)?.projected)
    }

    /// Pressure part `N_p(f) = p_f + q_f`, the potential of `(I - Pi) f`.
    pub fn np_operator(&self, f: &VectorField) -> Result<ScalarField> {
        let d = self.project(f)?;
        let mut s = d.p_u;
        for (a, b) in s.data.iter_mut().zip(&d.q_u.data) {
            *a += b;
        }
        Ok(s)
    }
}

/// Copy of `v` with the normal components on the Dirichlet part zeroed.
pub fn without_dirichlet_normals(v: &VectorField) -> VectorField {
    let g = v.grid;
    let mut r = v.clone();
    for k in 0..g.nz {
        r.u1[g.xf(0, k)] = 0.0;
    }
    for k in 0..g.nx {
        r.u2[g.zf(k, 0)] = 0.0;
        r.u2[g.zf(k, g.nz)] = 0.0;
    }
    r
}

/// Largest normal component on the Dirichlet part.
pub fn dirichlet_normal_max(v: &VectorField) -> f64 {
    let g = &v.grid;
    let mut m = 0.0f64;
    for b in [Boundary::Inflow, Boundary::Bottom, Boundary::Top] {
        for k in 0..g.side_len(b) {
            m = m.max(v.normal_trace(b, k).abs());
        }
    }
    m
}

/// Gradient of a cell field vanishing on the outflow, with arbitrary Neumann
/// closure values on the Dirichlet part (the test-function class of the
/// orthogonality statement).
pub fn outflow_vanishing_gradient(phi: &ScalarField, neumann: &ScalarBc) -> Result<VectorField> {
    let mut bc = neumann.clone();
    bc.kinds = BcKinds::MIXED;
    bc.outflow.iter_mut().for_each(|v| *v = 0.0);
    gradient_bc(phi, &bc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid() -> Grid2D {
        Grid2D::new(10, 6, 2.0).unwrap()
    }

    fn field_from(g: Grid2D, vals: &[f64]) -> VectorField {
        let mut v = VectorField::zeros(g);
        let n = vals.len();
        for (k, x) in v.u1.iter_mut().enumerate() {
            *x = vals[k % n] + 0.3 * ((k * 7) as f64).sin();
        }
        for (k, x) in v.u2.iter_mut().enumerate() {
            *x = vals[(k + 3) % n] - 0.2 * ((k * 5) as f64).cos();
        }
        v
    }

    #[test]
    fn zero_maps_to_zero() {
        let g = grid();
        let p = LerayProjector::new(g).unwrap();
        let d = p.project(&VectorField::zeros(g)).unwrap();
        assert_eq!(d.projected.max_abs(), 0.0);
        assert!(d.p_u.data.iter().chain(&d.q_u.data).all(|v| *v == 0.0));
        let z = p.solve_poisson_dirichlet(&ScalarField::zeros(g, Stagger::Cell)).unwrap();
        assert!(z.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dirichlet_poisson_manufactured_order() {
        let len = 2.0;
        let err = |n: usize| {
            let g = Grid2D::new(2 * n, n, len).unwrap();
            let p = LerayProjector::new(g).unwrap();
            let exact = |x: f64, z: f64| (PI * x / len).sin() * (PI * z).sin();
            let k2 = PI * PI * (1.0 / (len * len) + 1.0);
            let rhs = ScalarField::from_fn(g, Stagger::Cell, |x, z| -k2 * exact(x, z));
            let s = p.solve_poisson_dirichlet(&rhs).unwrap();
            let e = ScalarField::from_fn(g, Stagger::Cell, exact);
            let d = ScalarField { data: s.data.iter().zip(&e.data).map(|(a, b)| a - b).collect(), ..s };
            d.norm()
        };
        let order = (err(12) / err(24)).log2();
        assert!(order >= 1.9, "order {order}");
    }

    #[test]
    fn dirichlet_potential_removes_divergence() {
        let g = grid();
        let p = LerayProjector::new(g).unwrap();
        let u = field_from(g, &[0.3, -1.0, 0.7, 0.1, 0.5]);
        let pu = p.solve_poisson_dirichlet(&divergence(&u)).unwrap();
        let gp = gradient_bc(&pu, &ScalarBc::homogeneous(&g, BcKinds::ALL_DIRICHLET)).unwrap();
        let d = divergence(&u.sub(&gp));
        let scale = u.norm();
        assert!(d.norm() <= 1e-10 * scale.max(1.0), "{}", d.norm());
        // tested against an H1_0 mask: a bump supported in the interior
        let mask = ScalarField::from_fn(g, Stagger::Cell, |x, z| (PI * x / 2.0).sin() * (PI * z).sin());
        assert!(d.inner(&mask).unwrap().abs() <= 1e-10 * scale);
    }

    #[test]
    fn mixed_problem_with_zero_data_is_zero() {
        let g = grid();
        let p = LerayProjector::new(g).unwrap();
        let u = field_from(g, &[1.0, -0.5, 0.25]);
        let pi_u = p.apply(&u).unwrap();
        let zero = ScalarField::zeros(g, Stagger::Cell);
        let q = p.solve_harmonic_mixed(&pi_u, &zero).unwrap();
        assert!(q.data.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn constant_stream_gives_linear_potential() {
        let g = grid();
        let p = LerayProjector::new(g).unwrap();
        let u = VectorField::from_fn(g, |_, _| 1.0, |_, _| 0.0);
        let pu = p.solve_poisson_dirichlet(&divergence(&u)).unwrap();
        assert!(pu.data.iter().all(|v| v.abs() < 1e-14));
        let q = p.solve_harmonic_mixed(&u, &pu).unwrap();
        let exact = ScalarField::from_fn(g, Stagger::Cell, |x, _| x - g.length);
        let err = q.data.iter().zip(&exact.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-8, "{err}");
        assert!(p.apply(&u).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn pure_gradients_project_to_zero_and_np_recovers_potential() {
        let g = grid();
        let p = LerayProjector::new(g).unwrap();
        let phi = ScalarField::from_fn(g, Stagger::Cell, |x, z| (x - 0.3).powi(2) * (1.0 + z) + z.sin());
        let mut neu = ScalarBc::homogeneous(&g, BcKinds::MIXED);
        neu.top.iter_mut().enumerate().for_each(|(k, v)| *v = 0.1 * k as f64);
        let gphi = outflow_vanishing_gradient(&phi, &neu).unwrap();
        let d = p.project(&gphi).unwrap();
        assert!(d.projected.norm() <= 1e-10 * gphi.norm());
        let np = p.np_operator(&gphi).unwrap();
        let err = np.data.iter().zip(&phi.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn divergence_free_tangential_field_is_fixed() {
        let g = grid();
        let p = LerayProjector::new(g).unwrap();
        let u = field_from(g, &[0.4, 0.9, -0.2, 0.0, 1.3]);
        let pi_u = p.apply(&u).unwrap();
        let again = p.apply(&pi_u).unwrap();
        assert!(again.sub(&pi_u).norm() <= 1e-10 * pi_u.norm());
    }

    fn check_invariants(g: Grid2D, p: &LerayProjector, u: &VectorField) -> std::result::Result<(), TestCaseError> {
        let d = p.project(u).unwrap();
        let nu = u.norm();
        let pu = &d.projected;
        // exact decomposition
        let recomposed = pu.add(&d.gradient_part());
        prop_assert!(recomposed.sub(u).norm() <= 1e-12 * nu.max(1e-300));
        prop_assert!(divergence(pu).norm() <= 1e-10 * nu);
        prop_assert!(dirichlet_normal_max(pu) <= 1e-10 * nu);
        let again = p.apply(pu).unwrap();
        prop_assert!(again.sub(pu).norm() <= 1e-10 * nu);
        prop_assert!(pu.inner(&u.sub(pu)).unwrap().abs() <= 1e-10 * nu * nu);
        prop_assert!(pu.norm() <= nu * (1.0 + 1e-10));
        let phi = ScalarField::from_fn(g, Stagger::Cell, |x, z| (2.0 * x).cos() * z + x * x);
        let mut neu = ScalarBc::homogeneous(&g, BcKinds::MIXED);
        neu.inflow.iter_mut().for_each(|v| *v = 0.7);
        let gphi = outflow_vanishing_gradient(&phi, &neu).unwrap();
        prop_assert!(pu.inner(&gphi).unwrap().abs() <= 1e-10 * nu * gphi.norm());
        let np = p.np_operator(u).unwrap();
        let mut nbc = ScalarBc::homogeneous(&g, BcKinds::MIXED);
        let gp = d.gradient_part();
        for k in 0..g.nz {
            nbc.inflow[k] = -gp.u1[g.xf(0, k)];
        }
        for k in 0..g.nx {
            nbc.bottom[k] = -gp.u2[g.zf(k, 0)];
            nbc.top[k] = gp.u2[g.zf(k, g.nz)];
        }
        let gnp = gradient_bc(&np, &nbc).unwrap();
        prop_assert!(gnp.sub(&u.sub(pu)).norm() <= 1e-10 * nu);
        Ok(())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn projector_invariants_hold_for_random_fields(vals in prop::collection::vec(-1.0f64..1.0, 17)) {
            let g = Grid2D::new(8, 6, 1.7).unwrap();
            let p = LerayProjector::new(g).unwrap();
            let u = field_from(g, &vals);
            check_invariants(g, &p, &u)?;
        }
    }
}
