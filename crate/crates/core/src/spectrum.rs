//! Rightmost spectrum of the coupled operator.
//!
//! The eigenproblem `lambda M y = K y + C^T p`, `C y = 0` is reduced to a
//! standard one on an `M`-orthonormal basis of `ker C`: with `M = R^T R`
//! and `Z` an orthonormal basis of `ker (C R^-1)`, `Y = R^-1 Z` and the
//! reduced matrix is `Y^T K Y`. Its singular values are those of the
//! operator in the energy inner product.

use crate::coupled::CoupledSystem;
use crate::dense::{self, Cholesky, Mat, C64};
use crate::error::{Error, Result};
use crate::grid::VectorField;
use crate::stokes::Edges;

#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub value: C64,
    /// Primitive eigenvector `(v, b, eta)`, unit in the energy norm.
    pub vector: Vec<C64>,
    /// `|A x - lambda x| / (|A| |x|)` on the reduced matrix.
    pub ritz_residual: f64,
    /// Relative residual of the energy identity.
    pub energy_residual: f64,
}

#[derive(Clone, Debug)]
pub struct SpectrumReport {
    pub pairs: Vec<Eigenpair>,
    pub min_singular_value: f64,
    pub reduced_dim: usize,
}

impl SpectrumReport {
    pub fn max_real_part(&self) -> f64 {
        self.pairs.iter().map(|p| p.value.re).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Plain-text table: `re im ritz energy`.
    pub fn table(&self) -> String {
        let mut s = String::from("# re im ritz_residual energy_residual\n");
        for p in &self.pairs {
            s.push_str(&format!(
                "{:.10e} {:.10e} {:.3e} {:.3e}\n",
                p.value.re, p.value.im, p.ritz_residual, p.energy_residual
            ));
        }
        s
    }
}

/// Reduced matrix of the operator and the basis `Y` that maps back.
pub struct Reduction {
    pub matrix: Mat<f64>,
    pub basis: Mat<f64>,
}

pub fn reduce(sys: &CoupledSystem) -> Result<Reduction> {
    let (nf, n) = (sys.n_fluid(), sys.n_beam());
    let nv = nf + n;
    let big = sys.dim();
    let nc = sys.grid.n_cells();
    let diag = sys.mass().diagonal();
    let scale: Vec<f64> = diag[..nv].iter().map(|d| d.sqrt()).collect();

    // C D^{-1/2} restricted to the velocity block, transposed
    let cd = sys.constraint().to_dense();
    let ct = Mat::from_fn(nv, nc, |j, c| cd[(c, j)] / scale[j]);
    let q = ct.qr().compute_Q();
    let r = nv - nc;

    let m_eta = Mat::from_fn(n, n, |i, j| -sys.grid.dx * sys.beam.a_matrix()[(i, j)]);
    let l = Cholesky::new(&m_eta, "beam energy matrix")?.factor();
    let l_inv_t = upper_inverse(&l);

    let dim = r + n;
    let mut basis = Mat::<f64>::zeros(big, dim);
    for c in 0..r {
        for j in 0..nv {
            basis[(j, c)] = q[(j, nc + c)] / scale[j];
        }
    }
    for c in 0..n {
        for j in 0..n {
            basis[(nv + j, r + c)] = l_inv_t[(j, c)];
        }
    }
    let k = sys.stiffness();
    let mut ky = Mat::<f64>::zeros(big, dim);
    let mut col = vec![0.0; big];
    for c in 0..dim {
        for (j, v) in col.iter_mut().enumerate() {
            *v = basis[(j, c)];
        }
        for (j, v) in k.mul_vec(&col).into_iter().enumerate() {
            ky[(j, c)] = v;
        }
    }
    let matrix = basis.transpose() * &ky;
    Ok(Reduction { matrix, basis })
}

/// `(L^T)^-1` for lower-triangular `L`.
fn upper_inverse(l: &Mat<f64>) -> Mat<f64> {
    let n = l.nrows();
    let mut x = Mat::<f64>::zeros(n, n);
    for c in 0..n {
        for i in (0..n).rev() {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Energy identity for a primitive eigenpair:
/// `lambda (|v|^2 + |b|^2) + conj(lambda) |eta|^2_{H^2_0} + nu a(v) + gamma |b_x|^2 = 0`.
pub fn energy_identity_residual(sys: &CoupledSystem, lambda: C64, y: &[C64]) -> f64 {
    let (nf, n) = (sys.n_fluid(), sys.n_beam());
    let dx = sys.grid.dx;
    let diag = sys.mass().diagonal();
    let re: Vec<f64> = y.iter().map(|z| z.re).collect();
    let im: Vec<f64> = y.iter().map(|z| z.im).collect();
    let kinetic: f64 = (0..nf + n).map(|i| diag[i] * y[i].norm_sqr()).sum();
    let elastic = sys.beam.h2_inner(&re[nf + n..], &re[nf + n..]) + sys.beam.h2_inner(&im[nf + n..], &im[nf + n..]);
    let form = sys.ops.form();
    let zero = Edges::zeros(&sys.grid);
    let a = |x: &[f64]| -> f64 {
        let v: VectorField = sys.velocity(x);
        form.energy(&v, &zero)
    };
    let damping = |x: &[f64]| -> f64 {
        let b = &x[nf..nf + n];
        -dx * sys.beam.apply_lap(b).iter().zip(b).map(|(p, q)| p * q).sum::<f64>()
    };
    let dissipation = sys.params.nu * (a(&re) + a(&im)) + sys.params.gamma * (damping(&re) + damping(&im));
    let sum = lambda * kinetic + lambda.conj() * elastic + C64::new(dissipation, 0.0);
    let den = lambda.norm() * (kinetic + elastic) + dissipation;
    if den == 0.0 {
        0.0
    } else {
        sum.norm() / den
    }
}

/// The `k` rightmost eigenvalues of the coupled operator, by a dense solve
/// of the reduced matrix.
pub fn rightmost_eigenvalues(sys: &CoupledSystem, k: usize) -> Result<SpectrumReport> {
    let red = reduce(sys)?;
    let dim = red.matrix.nrows();
    if k > dim {
        return Err(Error::InvalidConfig(vec![format!("asked for {k} eigenvalues of a {dim}-dimensional operator")]));
    }
    let (vals, vecs) = dense::eigen(&red.matrix)?;
    let a_norm = frobenius(&red.matrix);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| vals[j].re.total_cmp(&vals[i].re));
    let mut pairs = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let lambda = vals[idx];
        let xi: Vec<C64> = (0..dim).map(|i| vecs[(i, idx)]).collect();
        let xi_norm = xi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut res = 0.0;
        for i in 0..dim {
            let mut s = -lambda * xi[i];
            for j in 0..dim {
                s += xi[j] * red.matrix[(i, j)];
            }
            res += s.norm_sqr();
        }
        let ritz_residual = res.sqrt() / (a_norm * xi_norm);
        let big = red.basis.nrows();
        let vector: Vec<C64> = (0..big)
            .map(|r| (0..dim).fold(C64::new(0.0, 0.0), |acc, c| acc + xi[c] * red.basis[(r, c)]) / xi_norm)
            .collect();
        let energy_residual = energy_identity_residual(sys, lambda, &vector);
        if !ritz_residual.is_finite() || ritz_residual > 1e-6 {
            return Err(Error::Eigen(format!("eigenpair {lambda} has Ritz residual {ritz_residual:.3e}")));
        }
        pairs.push(Eigenpair { value: lambda, vector, ritz_residual, energy_residual });
    }
    let sv = dense::singular_values(&red.matrix)?;
    let min_singular_value = sv.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SpectrumReport { pairs, min_singular_value, reduced_dim: dim })
}

fn frobenius(a: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    s.sqrt()
}
