//! Sparse and dense numerical kernels used by the operator truncations.

use nalgebra::{DMatrix, Matrix2, Matrix3, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows above which matrix-vector products are split across threads.
const PARALLEL_ROWS: usize = 1 << 15;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists; entries within a row are
    /// sorted and duplicates summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < n, "column {c} out of range");
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&j) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    /// Adds `delta` to the diagonal entry `(i, i)`, inserting it if absent.
    pub fn add_to_diagonal(&mut self, i: usize, delta: f64) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&i) {
            Ok(k) => self.vals[span.start + k] += delta,
            Err(_) => {
                let mut rows = self.to_rows();
                rows[i].push((i, delta));
                *self = CsrMatrix::from_rows(rows);
            }
        }
    }

    fn to_rows(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.n).map(|i| self.row(i).collect()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        CsrMatrix::from_rows(rows)
    }

    /// `P A P^T` where site `i` moves to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n);
        let mut rows = vec![Vec::new(); self.n];
        for i in 0..self.n {
            rows[perm[i]] = self.row(i).map(|(j, v)| (perm[j], v)).collect();
        }
        CsrMatrix::from_rows(rows)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (self.get(j, i) - v).abs() <= tol))
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        let row = |i: usize| -> f64 {
            let span = self.row_ptr[i]..self.row_ptr[i + 1];
            self.cols[span.clone()]
                .iter()
                .zip(&self.vals[span])
                .map(|(&j, &v)| v * x[j])
                .sum()
        };
        if self.n >= PARALLEL_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row(i);
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Fixed chunking with an ordered final sum keeps the result independent of
/// the thread count.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    const CHUNK: usize = 4096;
    if a.len() >= PARALLEL_ROWS {
        let partial: Vec<f64> = a
            .par_chunks(CHUNK)
            .zip(b.par_chunks(CHUNK))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
            .collect();
        partial.iter().sum()
    } else {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    if y.len() >= PARALLEL_ROWS {
        y.par_iter_mut().zip(x.par_iter()).for_each(|(yi, xi)| *yi += alpha * xi);
    } else {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }
}

fn scale(alpha: f64, x: &mut [f64]) {
    for v in x.iter_mut() {
        *v *= alpha;
    }
}

/// Settings for [`largest_eigenpair`].
#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    /// Converged when `||A x - rho x|| <= rel_tol * max(|rho|, floor_fraction * ||A||_inf)`.
    pub rel_tol: f64,
    pub floor_fraction: f64,
    pub max_iterations: usize,
    /// Return as soon as the Rayleigh quotient exceeds this value. The
    /// quotient is a lower bound on the largest eigenvalue, so the sign
    /// decision it supports is exact.
    pub stop_above: Option<f64>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            rel_tol: 1e-10,
            floor_fraction: 1e-3,
            max_iterations: 50_000,
            stop_above: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// True when the iteration stopped early through `stop_above`.
    pub early_exit: bool,
}

/// Largest eigenvalue of a symmetric sparse matrix by locally optimal block
/// preconditioned conjugate gradient with block size one (no preconditioner).
/// Each step performs Rayleigh-Ritz on `span{x, r, p}`.
pub fn largest_eigenpair(
    a: &CsrMatrix,
    guess: Option<&[f64]>,
    opts: &EigenOptions,
) -> Result<EigenPair> {
    let n = a.dim();
    if n == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    if n <= 3 {
        let eig = SymmetricEigen::new(a.to_dense());
        let (k, &value) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        return Ok(EigenPair {
            value,
            vector: eig.eigenvectors.column(k).iter().copied().collect(),
            residual: 0.0,
            iterations: 0,
            early_exit: false,
        });
    }
    let floor = opts.floor_fraction * a.norm_inf();

    let mut x: Vec<f64> = match guess {
        Some(g) if g.len() == n && norm(g) > 0.0 => g.to_vec(),
        _ => vec![1.0; n],
    };
    let nx = norm(&x);
    scale(1.0 / nx, &mut x);
    let mut ax = vec![0.0; n];
    a.matvec(&x, &mut ax);
    let mut rho = dot(&x, &ax);
    let mut p: Option<Vec<f64>> = None;
    let mut w = vec![0.0; n];
    let mut aw = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut residual = f64::INFINITY;

    for iter in 0..opts.max_iterations {
        // r = A x - rho x
        w.copy_from_slice(&ax);
        axpy(-rho, &x, &mut w);
        residual = norm(&w);
        if residual <= opts.rel_tol * rho.abs().max(floor) {
            return Ok(EigenPair {
                value: rho,
                vector: x,
                residual,
                iterations: iter,
                early_exit: false,
            });
        }
        if let Some(limit) = opts.stop_above {
            if rho > limit {
                return Ok(EigenPair {
                    value: rho,
                    vector: x,
                    residual,
                    iterations: iter,
                    early_exit: true,
                });
            }
        }

        // Orthonormal basis [x, w, p].
        for _ in 0..2 {
            let c = dot(&x, &w);
            axpy(-c, &x, &mut w);
        }
        let nw = norm(&w);
        if nw == 0.0 {
            break;
        }
        scale(1.0 / nw, &mut w);
        a.matvec(&w, &mut aw);

        let mut have_p = false;
        if let Some(pv) = p.as_mut() {
            let before = norm(pv);
            for _ in 0..2 {
                let c = dot(&x, pv);
                axpy(-c, &x, pv);
                let c = dot(&w, pv);
                axpy(-c, &w, pv);
            }
            let np = norm(pv);
            if np > 1e-10 * before {
                scale(1.0 / np, pv);
                a.matvec(pv, &mut ap);
                have_p = true;
            }
        }

        let xaw = dot(&x, &aw);
        let waw = dot(&w, &aw);
        let (c0, c1, c2) = if have_p {
            let pv = p.as_ref().unwrap();
            let xap = dot(&x, &ap);
            let wap = dot(&w, &ap);
            let pap = dot(pv, &ap);
            let g = Matrix3::new(rho, xaw, xap, xaw, waw, wap, xap, wap, pap);
            let eig = SymmetricEigen::new(g);
            let k = eig.eigenvalues.imax();
            let c = eig.eigenvectors.column(k);
            (c[0], c[1], c[2])
        } else {
            let g = Matrix2::new(rho, xaw, xaw, waw);
            let eig = SymmetricEigen::new(g);
            let k = eig.eigenvalues.imax();
            let c = eig.eigenvectors.column(k);
            (c[0], c[1], 0.0)
        };

        // New search direction p = c1 w + c2 p, new x = c0 x + p.
        let mut pn = vec![0.0; n];
        let mut apn = vec![0.0; n];
        axpy(c1, &w, &mut pn);
        axpy(c1, &aw, &mut apn);
        if have_p {
            axpy(c2, p.as_ref().unwrap(), &mut pn);
            axpy(c2, &ap, &mut apn);
        }
        scale(c0, &mut x);
        axpy(1.0, &pn, &mut x);
        scale(c0, &mut ax);
        axpy(1.0, &apn, &mut ax);
        let nx = norm(&x);
        scale(1.0 / nx, &mut x);
        scale(1.0 / nx, &mut ax);
        rho = dot(&x, &ax);
        p = Some(pn);
        // Periodically refresh A x to keep rounding drift out of the residual.
        if iter % 50 == 49 {
            a.matvec(&x, &mut ax);
            rho = dot(&x, &ax);
        }
    }
    Err(Error::EigenNoConvergence {
        iterations: opts.max_iterations,
        residual,
    })
}

/// Solves `M x = b` for symmetric positive definite `M` given as a closure.
pub fn conjugate_gradient<F>(apply: F, b: &[f64], rel_tol: f64, max_iterations: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut mp = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for _ in 0..max_iterations {
        apply(&p, &mut mp);
        let pmp = dot(&p, &mp);
        if !(pmp > 0.0) {
            return Err(Error::SingularSolve(format!(
                "operator not positive definite (p^T M p = {pmp:e})"
            )));
        }
        let alpha = rr / pmp;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &mp, &mut r);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= rel_tol * bnorm {
            return Ok(x);
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    Err(Error::SingularSolve(format!(
        "conjugate gradient did not reach {rel_tol:e} in {max_iterations} iterations"
    )))
}

/// `exp(t A)` for a matrix with nonnegative off-diagonal entries.
///
/// Shifts by `c = max |a_ii|` so that `t (A + c I)` is entrywise
/// nonnegative, then uses scaling and squaring on a Taylor polynomial.
/// Every intermediate is nonnegative, so the result is too.
pub fn expm_metzler(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let shift = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let mut b = a * t;
    for i in 0..n {
        b[(i, i)] += shift * t;
    }
    let norm1 = (0..n)
        .map(|j| b.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    while norm1 / 2f64.powi(squarings as i32) > 0.5 {
        squarings += 1;
    }
    let s = 2f64.powi(squarings as i32);
    let x = b / s;
    // 0.5^k / k! < 1e-20 for k >= 18
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=18 {
        term = &term * &x / k as f64;
        sum += &term;
    }
    let mut e = sum * (-shift * t / s).exp();
    for _ in 0..squarings {
        e = &e * &e;
    }
    e
}
