//! Classical multidimensional scaling: double-center the squared distances
//! and read coordinates off the top eigenpairs.

use crate::error::{Error, Result};
use crate::spectral::{extreme_eigenpairs, EigenOptions, SymmetricOp, Which};

/// The Gram operator B = -1/2 J D∘² J applied implicitly (J centers).
struct CenteredGram<'a> {
    n: usize,
    dist: &'a [f64],
}

impl SymmetricOp for CenteredGram<'_> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        use rayon::prelude::*;
        let n = self.n;
        let mean_x: f64 = x.iter().sum::<f64>() / n as f64;
        let u: Vec<f64> = x.iter().map(|v| v - mean_x).collect();
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let row = &self.dist[i * n..(i + 1) * n];
            *yi = -0.5 * row.iter().zip(&u).map(|(d, uj)| d * d * uj).sum::<f64>();
        });
        let mean_y: f64 = y.iter().sum::<f64>() / n as f64;
        for yi in y.iter_mut() {
            *yi -= mean_y;
        }
    }
}

/// Embeds an n x n distance matrix (row-major) into `dim` dimensions.
/// Requires `dim` strictly positive Gram eigenvalues.
pub fn classical_mds(
    dist: &[f64],
    n: usize,
    dim: usize,
    eigen_opts: &EigenOptions,
) -> Result<Vec<Vec<f64>>> {
    if dist.len() != n * n {
        return Err(Error::InvalidInput("distance matrix size mismatch".into()));
    }
    if dist.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numerical("non-finite distances in MDS input".into()));
    }
    if n <= dim {
        return Err(Error::InvalidInput(format!("cannot embed {n} points into {dim}d")));
    }
    let op = CenteredGram { n, dist };
    let eig = extreme_eigenpairs(&op, dim, Which::Largest, eigen_opts)?;
    if eig.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite MDS eigenvalues".into()));
    }
    let scale = eig.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if eig.values.iter().any(|&v| v <= 1e-12 * scale.max(1e-300)) {
        return Err(Error::Degenerate(format!(
            "MDS spectrum has fewer than {dim} positive eigenvalues: {:?}",
            eig.values
        )));
    }
    // coordinates: sqrt(lambda) * eigenvector, largest axis first
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.values[b].partial_cmp(&eig.values[a]).unwrap());
    Ok((0..n)
        .map(|i| {
            order
                .iter()
                .map(|&c| eig.values[c].sqrt() * eig.vectors[c][i])
                .collect()
        })
        .collect())
}
