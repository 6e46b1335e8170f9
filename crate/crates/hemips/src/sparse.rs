//! Compressed sparse row matrix, just enough for the operators built here:
//! symmetric storage (both triangles kept), matrix-vector products, row sums,
//! and a Matrix Market dump for offline inspection.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SparseMat {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMat {
    /// Build from per-row (column, value) lists. Entries in a row must not
    /// repeat; they are sorted by column here.
    pub fn from_rows(mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in rows.iter_mut() {
            row.sort_unstable_by_key(|&(j, _)| j);
            for &(j, v) in row.iter() {
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        SparseMat { n, indptr, indices, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        self.indices[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let lo = self.indptr[i];
            let hi = self.indptr[i + 1];
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.values[k] * x[self.indices[k]];
            }
            *yi = acc;
        });
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    /// Largest absolute asymmetry |a_ij - a_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn require_symmetric(&self, tol: f64) -> Result<()> {
        let a = self.asymmetry();
        if a > tol {
            return Err(Error::InvalidInput(format!(
                "matrix is not symmetric: max |a_ij - a_ji| = {a:.3e} > {tol:.3e}"
            )));
        }
        Ok(())
    }

    /// Principal submatrix on `keep` (row/column indices, strictly increasing).
    pub fn principal_submatrix(&self, keep: &[usize]) -> SparseMat {
        let mut pos = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            pos[old] = new;
        }
        let rows = keep
            .iter()
            .map(|&old| {
                self.row(old)
                    .filter_map(|(j, v)| (pos[j] != usize::MAX).then(|| (pos[j], v)))
                    .collect()
            })
            .collect();
        SparseMat::from_rows(rows)
    }

    /// Gershgorin upper bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Matrix Market coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n, self.n, self.nnz())?;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SparseMat {
        // [[2, -1, 0], [-1, 2, -1], [0, -1, 2]]
        SparseMat::from_rows(vec![
            vec![(0, 2.0), (1, -1.0)],
            vec![(1, 2.0), (0, -1.0), (2, -1.0)],
            vec![(2, 2.0), (1, -1.0)],
        ])
    }

    #[test]
    fn mul_vec_matches_dense() {
        let m = sample();
        let x = [1.0, 2.0, 3.0];
        let mut y = [0.0; 3];
        m.mul_vec(&x, &mut y);
        assert_eq!(y, [0.0, 0.0, 4.0]);
    }

    #[test]
    fn submatrix_keeps_selected_block() {
        let m = sample();
        let s = m.principal_submatrix(&[0, 2]);
        assert_eq!(s.dim(), 2);
        assert_eq!(s.get(0, 0), 2.0);
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.get(1, 1), 2.0);
    }

    #[test]
    fn symmetry_check() {
        let m = sample();
        assert!(m.require_symmetric(1e-12).is_ok());
        let a = SparseMat::from_rows(vec![vec![(1, 1.0)], vec![]]);
        assert!(a.require_symmetric(1e-12).is_err());
    }
}
