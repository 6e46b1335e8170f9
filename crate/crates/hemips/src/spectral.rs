//! Extreme eigenpairs of symmetric operators.
//!
//! A Krylov subspace is grown with full reorthogonalization; Rayleigh-Ritz on
//! the accumulated basis gives the extreme pairs. Keeping the full projected
//! matrix (rather than assuming it tridiagonal) makes restarts after
//! breakdown trivial, which is what handles repeated eigenvalues: when an
//! invariant subspace is exhausted the iteration re-seeds with a fresh
//! random vector orthogonal to everything found so far.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sparse::SparseMat;

pub trait SymmetricOp: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl SymmetricOp for SparseMat {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec(x, y);
    }
}

/// Dense symmetric operator backed by a row-major square buffer.
pub struct DenseOp<'a> {
    pub n: usize,
    pub data: &'a [f64],
}

impl SymmetricOp for DenseOp<'_> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Smallest,
    Largest,
}

#[derive(Clone, Debug)]
pub struct EigenResult {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Matching unit eigenvectors.
    pub vectors: Vec<Vec<f64>>,
    /// Explicit residual norms ||A v - lambda v||.
    pub residuals: Vec<f64>,
}

pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { tol: 1e-9, max_iter: 10_000, seed: 0x5eed }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn random_unit(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let nn = norm(&v);
    for x in v.iter_mut() {
        *x /= nn;
    }
    v
}

/// Orthogonalize `w` against `basis` (two passes), returning its norm after.
fn reorthogonalize(w: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for u in basis {
            let c = dot(u, w);
            for (wi, ui) in w.iter_mut().zip(u) {
                *wi -= c * ui;
            }
        }
    }
    norm(w)
}

/// The `count` algebraically smallest or largest eigenpairs of a symmetric
/// operator. Pairs are extracted one at a time with deflation (each new
/// Krylov space is kept orthogonal to the locked eigenvectors), which is
/// what makes repeated or clustered eigenvalues come out with their full
/// multiplicity: a single Krylov space only ever carries one direction of a
/// degenerate eigenspace.
pub fn extreme_eigenpairs(
    op: &dyn SymmetricOp,
    count: usize,
    which: Which,
    opts: &EigenOptions,
) -> Result<EigenResult> {
    let n = op.dim();
    if count == 0 || count > n {
        return Err(Error::InvalidInput(format!(
            "cannot extract {count} eigenpairs from a {n}x{n} matrix"
        )));
    }
    let mut rng = Rng::new(opts.seed);
    let mut locked: Vec<Vec<f64>> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut residuals: Vec<f64> = Vec::new();
    let mut scale_est = 1e-300f64;
    for _ in 0..count {
        let (lambda, vector, resid, scale) =
            extreme_one(op, which, &locked, opts, &mut rng, scale_est)?;
        scale_est = scale_est.max(scale);
        values.push(lambda);
        residuals.push(resid);
        locked.push(vector);
    }
    // rounds return the extreme of the remaining spectrum, so the sequence
    // is already monotone; sort ascending for the result contract
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    Ok(EigenResult {
        values: order.iter().map(|&i| values[i]).collect(),
        vectors: order.iter().map(|&i| locked[i].clone()).collect(),
        residuals: order.iter().map(|&i| residuals[i]).collect(),
    })
}

/// One deflated Lanczos round: the extreme eigenpair of the operator
/// restricted to the orthogonal complement of `locked`.
fn extreme_one(
    op: &dyn SymmetricOp,
    which: Which,
    locked: &[Vec<f64>],
    opts: &EigenOptions,
    rng: &mut Rng,
    scale_in: f64,
) -> Result<(f64, Vec<f64>, f64, f64)> {
    let n = op.dim();
    let free = n - locked.len();
    let max_dim = free.min(opts.max_iter.max(3));
    let fresh = |rng: &mut Rng, basis: &[Vec<f64>]| -> Result<Vec<f64>> {
        for _ in 0..40 {
            let mut v = random_unit(n, rng);
            let nn1 = reorthogonalize(&mut v, locked);
            if nn1 <= 1e-10 {
                continue;
            }
            for x in v.iter_mut() {
                *x /= nn1;
            }
            let nn2 = reorthogonalize(&mut v, basis);
            if nn2 <= 1e-10 {
                continue;
            }
            for x in v.iter_mut() {
                *x /= nn2;
            }
            return Ok(v);
        }
        Err(Error::Numerical(
            "could not find a direction orthogonal to the locked eigenvectors".into(),
        ))
    };

    let mut basis: Vec<Vec<f64>> = vec![fresh(rng, &[])?];
    // full Rayleigh matrix V^T A V, column per step
    let mut h: Vec<Vec<f64>> = Vec::new();
    let mut scale_est = scale_in;
    loop {
        let j = basis.len() - 1;
        let mut w = vec![0.0; n];
        op.apply(&basis[j], &mut w);
        let mut col = vec![0.0; j + 1];
        for (i, u) in basis.iter().enumerate() {
            col[i] = dot(u, &w);
        }
        for (i, u) in basis.iter().enumerate() {
            for (wi, ui) in w.iter_mut().zip(u) {
                *wi -= col[i] * ui;
            }
        }
        // keep the Krylov space out of the locked eigenspace and re-clean
        reorthogonalize(&mut w, locked);
        let resid_norm = reorthogonalize(&mut w, &basis);
        h.push(col);
        scale_est = scale_est.max(h[j][j].abs());

        let dim = basis.len();
        let done_growing = dim >= max_dim;
        if done_growing || dim % 15 == 0 || dim >= 2 {
            let mut hm = DMatrix::<f64>::zeros(dim, dim);
            for (jj, col) in h.iter().enumerate() {
                for (ii, &v) in col.iter().enumerate() {
                    hm[(ii, jj)] = v;
                    hm[(jj, ii)] = v;
                }
            }
            let eig = hm.symmetric_eigen();
            let c = match which {
                Which::Smallest => (0..dim)
                    .min_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap())
                    .unwrap(),
                Which::Largest => (0..dim)
                    .max_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap())
                    .unwrap(),
            };
            let scale = eig
                .eigenvalues
                .iter()
                .fold(0.0f64, |m, &v| m.max(v.abs()))
                .max(scale_est)
                .max(1e-300);
            let tail = eig.eigenvectors[(dim - 1, c)].abs();
            if resid_norm * tail <= opts.tol * scale || done_growing {
                // assemble the Ritz vector and verify explicitly
                let lambda = eig.eigenvalues[c];
                let mut x = vec![0.0; n];
                for (i, u) in basis.iter().enumerate() {
                    let s = eig.eigenvectors[(i, c)];
                    for (xi, ui) in x.iter_mut().zip(u) {
                        *xi += s * ui;
                    }
                }
                // project out any locked leakage before normalizing
                for u in locked {
                    let cc = dot(u, &x);
                    for (xi, ui) in x.iter_mut().zip(u) {
                        *xi -= cc * ui;
                    }
                }
                let xn = norm(&x);
                if xn > 1e-12 {
                    for xi in x.iter_mut() {
                        *xi /= xn;
                    }
                    let mut ax = vec![0.0; n];
                    op.apply(&x, &mut ax);
                    let r = ax
                        .iter()
                        .zip(&x)
                        .map(|(a, b)| (a - lambda * b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    if r <= opts.tol * scale * 10.0 {
                        return Ok((lambda, x, r, scale));
                    }
                    if done_growing {
                        return Err(Error::NoConvergence(format!(
                            "eigensolver stalled at basis size {dim} (residual {r:.3e}, \
                             scale {scale:.3e})"
                        )));
                    }
                } else if done_growing {
                    return Err(Error::NoConvergence(
                        "Ritz vector collapsed onto the locked subspace".into(),
                    ));
                }
            }
        }

        if basis.len() >= max_dim {
            // unreachable: the done_growing check above always returns
            return Err(Error::Numerical("eigensolver basis overflow".into()));
        }
        if resid_norm <= 1e-13 * scale_est.max(1.0) {
            // invariant subspace exhausted; bring in a fresh direction
            basis.push(fresh(rng, &basis)?);
        } else {
            for x in w.iter_mut() {
                *x /= resid_norm;
            }
            basis.push(w);
        }
    }
}

/// The `count` smallest eigenpairs of a sparse symmetric matrix. The matrix
/// must be symmetric within 1e-8.
pub fn smallest_eigenpairs(
    m: &SparseMat,
    count: usize,
    opts: &EigenOptions,
) -> Result<EigenResult> {
    m.require_symmetric(1e-8)?;
    extreme_eigenpairs(m, count, Which::Smallest, opts)
}

pub fn largest_eigenpairs(m: &SparseMat, count: usize, opts: &EigenOptions) -> Result<EigenResult> {
    m.require_symmetric(1e-8)?;
    extreme_eigenpairs(m, count, Which::Largest, opts)
}

/// Dense brute-force eigendecomposition, ascending. Test oracle and
/// small-problem fallback.
pub fn dense_symmetric_eigen(data: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = DMatrix::from_row_slice(n, n, data);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (values, vectors)
}
