//! Matrix-free GMRES and Arnoldi in a caller-supplied inner product.
//!
//! Both take the operator as a fallible closure because each application
//! is a full time-march.

use crate::dense::{self, Mat, C64};
use crate::error::{Error, Result};

pub type Inner<'a> = &'a dyn Fn(&[f64], &[f64]) -> f64;

#[derive(Clone, Debug)]
pub struct GmresOptions {
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions { tol: 1e-8, restart: 40, max_iter: 400 }
    }
}

#[derive(Clone, Debug)]
pub struct GmresResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// True relative residual `|b - A x| / |b|` at exit.
    pub residual: f64,
    /// Estimated relative residual after every inner iteration.
    pub history: Vec<f64>,
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (p, q) in y.iter_mut().zip(x) {
        *p += a * q;
    }
}

/// Restarted GMRES for `A x = b` from the initial guess `x0`.
pub fn gmres(
    apply: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    inner: Inner,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &GmresOptions,
) -> Result<GmresResult> {
    let n = b.len();
    let norm = |v: &[f64]| inner(v, v).max(0.0).sqrt();
    let b_norm = norm(b);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if b_norm == 0.0 && x.iter().all(|v| *v == 0.0) {
        return Ok(GmresResult { x, iterations: 0, residual: 0.0, history: vec![] });
    }
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let ax = apply(&x)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let beta = norm(&r);
        let rel = beta / scale;
        if rel <= opts.tol {
            return Ok(GmresResult { x, iterations, residual: rel, history });
        }
        if iterations >= opts.max_iter {
            history.push(rel);
            return Err(Error::SolverFailure { what: "GMRES".into(), history });
        }
        let m = opts.restart.min(opts.max_iter - iterations).max(1);
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|q| q / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let mut w = apply(&v[k])?;
            iterations += 1;
            // modified Gram-Schmidt, twice for stability
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let c = inner(&w, vi);
                    h[i][k] += c;
                    axpy(&mut w, -c, vi);
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let d = h[k][k].hypot(h[k + 1][k]);
            if d == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            h[k][k] = d;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            let est = g[k + 1].abs() / scale;
            history.push(est);
            if est <= 0.5 * opts.tol || hn <= 1e-14 * beta {
                break;
            }
            w.iter_mut().for_each(|q| *q /= hn);
            v.push(w);
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|j| h[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            axpy(&mut x, *yi, &v[i]);
        }
        if k_used == 0 {
            history.push(rel);
            return Err(Error::SolverFailure { what: "GMRES (breakdown)".into(), history });
        }
    }
}

#[derive(Clone, Debug)]
pub struct RitzReport {
    /// Ritz values, largest modulus first.
    pub values: Vec<C64>,
    /// `h_{m+1,m} |e_m^T s|` for each Ritz value.
    pub residuals: Vec<f64>,
    /// The Krylov space became invariant.
    pub exhausted: bool,
}

/// `m` steps of Arnoldi from `v0`.
pub fn arnoldi(
    apply: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    inner: Inner,
    v0: &[f64],
    m: usize,
) -> Result<RitzReport> {
    let norm = |v: &[f64]| inner(v, v).max(0.0).sqrt();
    let n0 = norm(v0);
    if n0 == 0.0 {
        return Err(Error::Inconclusive("Arnoldi started from the zero vector".into()));
    }
    let mut v: Vec<Vec<f64>> = vec![v0.iter().map(|q| q / n0).collect()];
    let mut h = Mat::<f64>::zeros(m + 1, m);
    let mut steps = 0;
    let mut exhausted = false;
    for k in 0..m {
        let mut w = apply(&v[k])?;
        let wn0 = norm(&w);
        for _ in 0..2 {
            for (i, vi) in v.iter().enumerate() {
                let c = inner(&w, vi);
                h[(i, k)] += c;
                axpy(&mut w, -c, vi);
            }
        }
        let hn = norm(&w);
        h[(k + 1, k)] = hn;
        steps = k + 1;
        if hn <= 1e-12 * wn0.max(f64::MIN_POSITIVE) {
            exhausted = true;
            break;
        }
        w.iter_mut().for_each(|q| *q /= hn);
        v.push(w);
    }
    let hm = Mat::from_fn(steps, steps, |i, j| h[(i, j)]);
    let (vals, vecs) = dense::eigen(&hm)?;
    let tail = h[(steps, steps - 1)];
    let mut pairs: Vec<(C64, f64)> = (0..steps)
        .map(|i| {
            let s_norm = (0..steps).map(|r| vecs[(r, i)].norm_sqr()).sum::<f64>().sqrt();
            (vals[i], tail * vecs[(steps - 1, i)].norm() / s_norm)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.norm().total_cmp(&a.0.norm()));
    Ok(RitzReport {
        values: pairs.iter().map(|p| p.0).collect(),
        residuals: pairs.iter().map(|p| p.1).collect(),
        exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn euclid(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(p, q)| p * q).sum()
    }

    fn tridiag(n: usize) -> impl FnMut(&[f64]) -> Result<Vec<f64>> {
        move |x: &[f64]| {
            Ok((0..n)
                .map(|i| {
                    let mut s = 3.0 * x[i];
                    if i > 0 {
                        s -= x[i - 1];
                    }
                    if i + 1 < n {
                        s -= 0.5 * x[i + 1];
                    }
                    s
                })
                .collect())
        }
    }

    #[test]
    fn gmres_solves_nonsymmetric_system_with_restarts() {
        let n = 60;
        let b: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let mut op = tridiag(n);
        let opts = GmresOptions { tol: 1e-12, restart: 5, max_iter: 500 };
        let r = gmres(&mut op, &euclid, &b, None, &opts).unwrap();
        assert!(r.residual <= 1e-12);
        let ax = op(&r.x).unwrap();
        let err = ax.iter().zip(&b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(err < 1e-10);
    }

    #[test]
    fn weighted_inner_product_and_initial_guess() {
        let n = 30;
        let w: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let inner = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(&w).map(|((p, q), r)| p * q * r).sum::<f64>();
        let b = vec![1.0; n];
        let mut op = tridiag(n);
        let opts = GmresOptions { tol: 1e-11, ..Default::default() };
        let a = gmres(&mut op, &inner, &b, None, &opts).unwrap();
        let guess = vec![5.0; n];
        let c = gmres(&mut op, &inner, &b, Some(&guess), &opts).unwrap();
        let d = a.x.iter().zip(&c.x).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(d < 1e-9);
        let z = gmres(&mut op, &inner, &vec![0.0; n], None, &opts).unwrap();
        assert!(z.x.iter().all(|v| *v == 0.0) && z.iterations == 0);
    }

    #[test]
    fn arnoldi_finds_dominant_eigenvalue() {
        // diag(0.9, 0.5, 0.1, ...) rotated into a non-normal upper-triangular form
        let n = 40;
        let mut op = move |x: &[f64]| -> Result<Vec<f64>> {
            Ok((0..n)
                .map(|i| {
                    let d = if i == 0 { 0.9 } else { 0.5 / (1.0 + i as f64) };
                    d * x[i] + if i + 1 < n { 0.1 * x[i + 1] } else { 0.0 }
                })
                .collect())
        };
        let v0: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let r = arnoldi(&mut op, &euclid, &v0, 25).unwrap();
        assert!((r.values[0].norm() - 0.9).abs() < 1e-8, "{:?}", r.values[0]);
        assert!(r.residuals[0] < 1e-6);
    }

    #[test]
    fn arnoldi_detects_invariant_subspace() {
        let mut op = |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![2.0 * x[0], 0.5 * x[1], 0.0]) };
        let r = arnoldi(&mut op, &euclid, &[1.0, 1.0, 0.0], 3).unwrap();
        assert!(r.exhausted);
        assert!((r.values[0].re - 2.0).abs() < 1e-12);
    }
}
