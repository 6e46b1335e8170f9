//! Reference embedders and evaluation metrics.
//!
//! Isomap embeds geodesic distances with classical MDS; the chordal variant
//! first converts geodesics to hemisphere chord lengths
//! d_e = sqrt(2 r² (1 - cos(d_g / r))) with r = d_max / pi, the radius
//! implied by the longest geodesic. LLE reconstructs each point from its
//! neighbors and reads coordinates off the bottom non-constant eigenvectors
//! of (I-W)ᵀ(I-W). Procrustes superimposition (similarity transform,
//! reflections allowed) aligns an embedding to ground truth and scores the
//! mean point distance; normal fields are compared by mean angle.

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::equator::GeodesicTable;
use crate::error::{Error, Result};
use crate::mds::classical_mds;
use crate::pixelgraph::PixelGraph;
use crate::reconstruct::NormalField;
use crate::sparse::SparseMat;
use crate::spectral::{extreme_eigenpairs, EigenOptions, SymmetricOp, Which};

#[derive(Clone, Debug)]
pub struct Embedding3D {
    pub points: Vec<[f64; 3]>,
    pub method: String,
}

/// Hemisphere chord length for a geodesic distance, using the radius implied
/// by the longest geodesic (r = d_max / pi).
pub fn chordal_distance(d_g: f64, d_max: f64) -> f64 {
    let r = d_max / std::f64::consts::PI;
    (2.0 * r * r * (1.0 - (d_g / r).cos())).max(0.0).sqrt()
}

pub fn isomap_embed(
    table: &GeodesicTable,
    chordal: bool,
    eigen_opts: &EigenOptions,
) -> Result<Embedding3D> {
    let dist: Vec<f64> = if chordal {
        table.d.iter().map(|&d| chordal_distance(d, table.d_max)).collect()
    } else {
        table.d.clone()
    };
    let coords = classical_mds(&dist, table.n, 3, eigen_opts)?;
    Ok(Embedding3D {
        points: coords.iter().map(|c| [c[0], c[1], c[2]]).collect(),
        method: if chordal { "isomap-chordal".into() } else { "isomap".into() },
    })
}

struct LleOp {
    w: SparseMat,
    wt: SparseMat,
}

impl SymmetricOp for LleOp {
    fn dim(&self) -> usize {
        self.w.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        // (I - W)ᵀ (I - W) x
        let n = x.len();
        let mut u = vec![0.0; n];
        self.w.mul_vec(x, &mut u);
        for i in 0..n {
            u[i] = x[i] - u[i];
        }
        self.wt.mul_vec(&u, y);
        for i in 0..n {
            y[i] = u[i] - y[i];
        }
    }
}

/// Core LLE on a point cloud with given neighborhoods.
pub fn lle_embed_points(
    points: &[Vec<f64>],
    neighbors: &[Vec<usize>],
    dim: usize,
    eigen_opts: &EigenOptions,
) -> Result<Embedding3D> {
    let n = points.len();
    if n < dim + 2 {
        return Err(Error::InvalidInput("too few points for LLE".into()));
    }
    // connectivity check
    {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 0;
        while let Some(p) = stack.pop() {
            count += 1;
            for &q in &neighbors[p] {
                if !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        if count != n {
            return Err(Error::EmptyGraph(format!(
                "LLE needs a connected graph ({count} of {n} reachable)"
            )));
        }
    }
    // reconstruction weights per row
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|p| {
            let neigh = &neighbors[p];
            let k = neigh.len();
            if k == 0 {
                return Vec::new();
            }
            let d = points[p].len();
            // Gram of neighbor offsets
            let mut g = DMatrix::<f64>::zeros(k, k);
            for i in 0..k {
                for j in i..k {
                    let mut acc = 0.0;
                    for t in 0..d {
                        acc += (points[p][t] - points[neigh[i]][t])
                            * (points[p][t] - points[neigh[j]][t]);
                    }
                    g[(i, j)] = acc;
                    g[(j, i)] = acc;
                }
            }
            let tr = g.trace();
            let reg = if tr > 0.0 { 1e-9 * tr } else { 1e-12 };
            for i in 0..k {
                g[(i, i)] += reg;
            }
            let ones = DVector::<f64>::repeat(k, 1.0);
            let w = g
                .clone()
                .cholesky()
                .map(|ch| ch.solve(&ones))
                .unwrap_or_else(|| {
                    g.svd(true, true).solve(&ones, 1e-12).unwrap_or_else(|_| ones.clone())
                });
            let s: f64 = w.iter().sum();
            let w = if s.abs() > 1e-300 { w / s } else { DVector::repeat(k, 1.0 / k as f64) };
            neigh.iter().zip(w.iter()).map(|(&q, &wi)| (q, wi)).collect()
        })
        .collect();
    let w = SparseMat::from_rows(rows.clone());
    // transpose
    let mut t_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (p, row) in rows.iter().enumerate() {
        for &(q, v) in row {
            t_rows[q].push((p, v));
        }
    }
    let wt = SparseMat::from_rows(t_rows);
    let op = LleOp { w, wt };
    // the constant vector is always in the kernel and may mix into the whole
    // bottom eigenspace; take one extra pair and deflate it out of the span
    let eig = extreme_eigenpairs(&op, dim + 1, Which::Smallest, eigen_opts)?;
    let mut basis = DMatrix::<f64>::zeros(n, dim + 1);
    for (c, v) in eig.vectors.iter().enumerate() {
        let mean: f64 = v.iter().sum::<f64>() / n as f64;
        for (r, &x) in v.iter().enumerate() {
            basis[(r, c)] = x - mean;
        }
    }
    let svd = basis.svd(true, false);
    let u = svd.u.as_ref().expect("svd computed with U");
    let points_out: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let mut c = [0.0; 3];
            for (axis, slot) in c.iter_mut().enumerate().take(dim) {
                *slot = u[(i, axis)];
            }
            c
        })
        .collect();
    Ok(Embedding3D { points: points_out, method: "lle".into() })
}

/// LLE on the pixel graph's normalized intensity vectors.
pub fn lle_embed(graph: &PixelGraph, dim: usize, eigen_opts: &EigenOptions) -> Result<Embedding3D> {
    lle_embed_points(&graph.vectors, &graph.neighbors, dim, eigen_opts)
}

/// Optimal similarity alignment (rotation, reflection allowed, uniform
/// scale, translation) of `source` onto `target`; returns the aligned points
/// and the mean point-pair distance.
pub fn procrustes_align(
    source: &[[f64; 3]],
    target: &[[f64; 3]],
) -> Result<(Vec<[f64; 3]>, f64)> {
    let n = source.len();
    if n != target.len() {
        return Err(Error::IndexMismatch(format!(
            "point counts differ: {n} vs {}",
            target.len()
        )));
    }
    if n < 3 {
        return Err(Error::InvalidInput("need at least 3 points".into()));
    }
    let centroid = |pts: &[[f64; 3]]| {
        let mut c = [0.0f64; 3];
        for p in pts {
            for (ci, &pi) in c.iter_mut().zip(p) {
                *ci += pi;
            }
        }
        c.map(|v| v / n as f64)
    };
    let cs = centroid(source);
    let ct = centroid(target);
    let mut h = Matrix3::<f64>::zeros();
    let mut source_sq = 0.0;
    for (s, t) in source.iter().zip(target) {
        let sc = [s[0] - cs[0], s[1] - cs[1], s[2] - cs[2]];
        let tc = [t[0] - ct[0], t[1] - ct[1], t[2] - ct[2]];
        source_sq += sc.iter().map(|v| v * v).sum::<f64>();
        for i in 0..3 {
            for j in 0..3 {
                h[(i, j)] += sc[j] * tc[i];
            }
        }
    }
    if source_sq < 1e-300 {
        return Err(Error::Degenerate("source points coincide".into()));
    }
    let svd = h.svd(true, true);
    // rank >= 2 rules out collinear sets
    if svd.singular_values[1] <= 1e-12 * svd.singular_values[0].max(1e-300) {
        return Err(Error::Degenerate("points are (near) collinear".into()));
    }
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let r = u * vt; // reflections allowed: no determinant correction
    let scale: f64 = svd.singular_values.iter().sum::<f64>() / source_sq;
    let aligned: Vec<[f64; 3]> = source
        .iter()
        .map(|s| {
            let sc = [s[0] - cs[0], s[1] - cs[1], s[2] - cs[2]];
            let mut out = [0.0f64; 3];
            for i in 0..3 {
                out[i] = ct[i] + scale * (r[(i, 0)] * sc[0] + r[(i, 1)] * sc[1] + r[(i, 2)] * sc[2]);
            }
            out
        })
        .collect();
    let mean_err = aligned
        .iter()
        .zip(target)
        .map(|(a, t)| {
            ((a[0] - t[0]).powi(2) + (a[1] - t[1]).powi(2) + (a[2] - t[2]).powi(2)).sqrt()
        })
        .sum::<f64>()
        / n as f64;
    Ok((aligned, mean_err))
}

/// Mean angle between two normal fields over their common mask, in degrees.
pub fn mean_angle_error(est: &NormalField, truth: &NormalField) -> Result<f64> {
    if est.width != truth.width || est.height != truth.height {
        return Err(Error::IndexMismatch("field dimensions differ".into()));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..est.normals.len() {
        if est.mask[i] && truth.mask[i] {
            let a = est.normals[i];
            let b = truth.normals[i];
            let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
            acc += dot.acos();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyGraph("no overlapping mask pixels".into()));
    }
    Ok((acc / count as f64).to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equator::table_from_distances;
    use crate::hemisphere::sample_uniform_hemisphere;
    use crate::rng::Rng;

    #[test]
    fn chordal_endpoints() {
        let d_max = 2.4;
        assert_eq!(chordal_distance(0.0, d_max), 0.0);
        let r = d_max / std::f64::consts::PI;
        assert!((chordal_distance(d_max, d_max) - 2.0 * r).abs() < 1e-12);
    }

    fn hemisphere_table(n: usize, seed: u64) -> (Vec<[f64; 3]>, GeodesicTable) {
        let pts = sample_uniform_hemisphere(n, seed);
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = pts[i].angle_to(&pts[j]);
            }
        }
        let truth: Vec<[f64; 3]> = pts.iter().map(|p| [p.x, p.y, p.z]).collect();
        (truth, table_from_distances(d, n).unwrap())
    }

    #[test]
    fn chordal_isomap_recovers_hemisphere() {
        let (truth, table) = hemisphere_table(600, 3);
        let emb = isomap_embed(&table, true, &EigenOptions::default()).unwrap();
        let (_, err) = procrustes_align(&emb.points, &truth).unwrap();
        assert!(err < 0.02, "procrustes error {err}");
        // and beats the plain variant on the same instance
        let plain = isomap_embed(&table, false, &EigenOptions::default()).unwrap();
        let (_, err_plain) = procrustes_align(&plain.points, &truth).unwrap();
        assert!(err <= err_plain, "chordal {err} vs plain {err_plain}");
    }

    #[test]
    fn lle_recovers_planar_grid() {
        // 12x12 grid embedded linearly in 5 dimensions
        let mut rng = Rng::new(5);
        let a: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let mut points = Vec::new();
        let mut grid = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                let (u, v) = (i as f64, j as f64);
                grid.push((u, v));
                points.push((0..5).map(|t| u * a[t] + v * b[t]).collect::<Vec<f64>>());
            }
        }
        let n = points.len();
        // 8-neighborhoods by Euclidean distance
        let neighbors: Vec<Vec<usize>> = (0..n)
            .map(|p| {
                let mut ds: Vec<(f64, usize)> = (0..n)
                    .filter(|&q| q != p)
                    .map(|q| {
                        let d: f64 = points[p]
                            .iter()
                            .zip(&points[q])
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum();
                        (d, q)
                    })
                    .collect();
                ds.sort_by(|x, y| x.partial_cmp(y).unwrap());
                ds[..8].iter().map(|&(_, q)| q).collect()
            })
            .collect();
        let emb = lle_embed_points(&points, &neighbors, 2, &EigenOptions::default()).unwrap();
        // fit an affine map from embedding to the true grid and check R²
        for axis in 0..2 {
            let y: Vec<f64> = grid.iter().map(|g| if axis == 0 { g.0 } else { g.1 }).collect();
            let mut x = DMatrix::<f64>::zeros(n, 3);
            for i in 0..n {
                x[(i, 0)] = emb.points[i][0];
                x[(i, 1)] = emb.points[i][1];
                x[(i, 2)] = 1.0;
            }
            let yv = DVector::from_vec(y.clone());
            let beta = (x.transpose() * &x)
                .try_inverse()
                .unwrap()
                * x.transpose()
                * &yv;
            let fit = x * beta;
            let mean = y.iter().sum::<f64>() / n as f64;
            let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
            let ss_res: f64 = (0..n).map(|i| (y[i] - fit[i]) * (y[i] - fit[i])).sum();
            let r2 = 1.0 - ss_res / ss_tot;
            assert!(r2 > 0.99, "axis {axis}: R² {r2}");
        }
        // output coordinates are orthogonal to the constant vector
        for axis in 0..2 {
            let mean: f64 =
                emb.points.iter().map(|p| p[axis]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-6, "axis {axis} mean {mean}");
        }
    }

    /// Independent per-row oracle: eliminate the sum-to-one constraint and
    /// solve the reduced unconstrained least squares with SVD.
    #[test]
    fn lle_weights_match_least_squares_oracle() {
        let mut rng = Rng::new(9);
        let points: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..4).map(|_| rng.normal()).collect())
            .collect();
        let neighbors: Vec<Vec<usize>> = (0..40)
            .map(|p| {
                let mut ds: Vec<(f64, usize)> = (0..40)
                    .filter(|&q| q != p)
                    .map(|q| {
                        let d: f64 = points[p]
                            .iter()
                            .zip(&points[q])
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum();
                        (d, q)
                    })
                    .collect();
                ds.sort_by(|x, y| x.partial_cmp(y).unwrap());
                ds[..6].iter().map(|&(_, q)| q).collect()
            })
            .collect();
        let emb = lle_embed_points(&points, &neighbors, 2, &EigenOptions::default());
        assert!(emb.is_ok());
        // recompute our weights for row 0 and compare the residual with the
        // oracle's
        let p = 0usize;
        let k = neighbors[p].len();
        let d = 4usize;
        let residual_of = |w: &[f64]| -> f64 {
            let mut acc = 0.0;
            for t in 0..d {
                let mut v = points[p][t];
                for (i, &q) in neighbors[p].iter().enumerate() {
                    v -= w[i] * points[q][t];
                }
                acc += v * v;
            }
            acc.sqrt()
        };
        // our route: regularized Gram solve
        let mut g = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let mut acc = 0.0;
                for t in 0..d {
                    acc += (points[p][t] - points[neighbors[p][i]][t])
                        * (points[p][t] - points[neighbors[p][j]][t]);
                }
                g[(i, j)] = acc;
            }
        }
        let tr = g.trace();
        for i in 0..k {
            g[(i, i)] += 1e-9 * tr;
        }
        let ours = g.cholesky().unwrap().solve(&DVector::repeat(k, 1.0));
        let s: f64 = ours.iter().sum();
        let ours: Vec<f64> = ours.iter().map(|v| v / s).collect();
        // oracle: substitute w_k = 1 - sum(others), unconstrained lstsq
        let mut amat = DMatrix::<f64>::zeros(d, k - 1);
        let mut bvec = DVector::<f64>::zeros(d);
        let last = neighbors[p][k - 1];
        for t in 0..d {
            bvec[t] = points[p][t] - points[last][t];
            for i in 0..(k - 1) {
                amat[(t, i)] = points[neighbors[p][i]][t] - points[last][t];
            }
        }
        let sol = amat.svd(true, true).solve(&bvec, 1e-12).unwrap();
        let mut oracle = vec![0.0; k];
        let mut acc = 0.0;
        for i in 0..(k - 1) {
            oracle[i] = sol[i];
            acc += sol[i];
        }
        oracle[k - 1] = 1.0 - acc;
        assert!(
            residual_of(&ours) <= residual_of(&oracle) + 1e-8,
            "ours {} oracle {}",
            residual_of(&ours),
            residual_of(&oracle)
        );
    }

    #[test]
    fn lle_requires_connected_graph() {
        let points: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 0.0]).collect();
        let neighbors = vec![vec![1], vec![0], vec![3], vec![2], vec![5], vec![4]];
        assert!(matches!(
            lle_embed_points(&points, &neighbors, 2, &EigenOptions::default()),
            Err(Error::EmptyGraph(_))
        ));
    }

    #[test]
    fn procrustes_exact_recovery_and_reflection() {
        let mut rng = Rng::new(1);
        let target: Vec<[f64; 3]> =
            (0..50).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect();
        let (s, c) = (0.6f64, 0.8f64);
        // rotation about z, scale 2.5, translation, then also a reflection
        let mut source: Vec<[f64; 3]> = target
            .iter()
            .map(|t| {
                [
                    2.5 * (c * t[0] - s * t[1]) + 1.0,
                    2.5 * (s * t[0] + c * t[1]) - 2.0,
                    2.5 * t[2] + 0.5,
                ]
            })
            .collect();
        let (_, err) = procrustes_align(&source, &target).unwrap();
        assert!(err < 1e-10, "similarity recovery error {err}");
        for p in source.iter_mut() {
            p[2] = -p[2];
        }
        let (_, err) = procrustes_align(&source, &target).unwrap();
        assert!(err < 1e-10, "reflection recovery error {err}");
    }

    #[test]
    fn procrustes_error_is_optimal_and_rotation_invariant() {
        let mut rng = Rng::new(2);
        let source: Vec<[f64; 3]> =
            (0..100).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect();
        let target: Vec<[f64; 3]> = source
            .iter()
            .map(|p| {
                [
                    p[0] + 0.1 * rng.normal(),
                    p[1] + 0.1 * rng.normal(),
                    p[2] + 0.1 * rng.normal(),
                ]
            })
            .collect();
        let (_, best) = procrustes_align(&source, &target).unwrap();
        // no random similarity transform does better (sum-of-squares optimum
        // implies mean-distance near-optimum on this well-spread cloud)
        let sq_err = |pts: &[[f64; 3]]| -> f64 {
            pts.iter()
                .zip(&target)
                .map(|(a, t)| {
                    (a[0] - t[0]).powi(2) + (a[1] - t[1]).powi(2) + (a[2] - t[2]).powi(2)
                })
                .sum::<f64>()
        };
        let (aligned, _) = procrustes_align(&source, &target).unwrap();
        let best_sq = sq_err(&aligned);
        for _ in 0..200 {
            let (a, b) = (rng.uniform(0.0, 6.28), rng.uniform(0.0, 3.14));
            let scale = rng.uniform(0.5, 2.0);
            let t = [rng.normal(), rng.normal(), rng.normal()];
            let moved: Vec<[f64; 3]> = source
                .iter()
                .map(|p| {
                    let x = p[0] * a.cos() - p[1] * a.sin();
                    let y = p[0] * a.sin() + p[1] * a.cos();
                    let z = p[2];
                    let x2 = x * b.cos() + z * b.sin();
                    let z2 = -x * b.sin() + z * b.cos();
                    [scale * x2 + t[0], scale * y + t[1], scale * z2 + t[2]]
                })
                .collect();
            assert!(best_sq <= sq_err(&moved) + 1e-9);
        }
        // pre-rotating the source leaves the optimal error unchanged
        let rotated: Vec<[f64; 3]> = source
            .iter()
            .map(|p| [p[1], -p[0], p[2]])
            .collect();
        let (_, err2) = procrustes_align(&rotated, &target).unwrap();
        assert!((best - err2).abs() < 1e-9, "{best} vs {err2}");
    }

    #[test]
    fn procrustes_rejects_degenerate_inputs() {
        let line: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 0.0, 0.0]).collect();
        let target: Vec<[f64; 3]> = (0..5).map(|i| [0.0, i as f64, 0.0]).collect();
        assert!(procrustes_align(&line, &target).is_err());
        assert!(procrustes_align(&line[..2], &target[..2]).is_err());
    }

    fn field_from(normals: Vec<[f64; 3]>, w: usize, h: usize) -> NormalField {
        NormalField {
            width: w,
            height: h,
            mask: vec![true; w * h],
            normals,
            interpolated: vec![false; w * h],
            z_floor: 0.0,
        }
    }

    #[test]
    fn angle_error_basics() {
        let a = field_from(vec![[0.0, 0.0, 1.0]; 4], 2, 2);
        assert_eq!(mean_angle_error(&a, &a).unwrap(), 0.0);
        // uniform 10-degree tilt about the x axis
        let t = 10f64.to_radians();
        let b = field_from(vec![[0.0, t.sin(), t.cos()]; 4], 2, 2);
        assert!((mean_angle_error(&a, &b).unwrap() - 10.0).abs() < 1e-6);
        // empty overlap
        let mut c = a.clone();
        c.mask = vec![false; 4];
        assert!(mean_angle_error(&a, &c).is_err());
    }

    #[test]
    fn angle_error_matches_monte_carlo_expectation() {
        let mut rng = Rng::new(12);
        let n = 4000usize;
        let truth = field_from(vec![[1.0, 0.0, 0.0]; n], n, 1);
        let normals: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                let z = rng.next_f64();
                let phi = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
                let s = (1.0 - z * z).sqrt();
                [s * phi.cos(), s * phi.sin(), z]
            })
            .collect();
        // independent Monte-Carlo of the same expectation
        let mut rng2 = Rng::new(999);
        let mut expect = 0.0;
        let m = 200_000;
        for _ in 0..m {
            let z = rng2.next_f64();
            let phi = rng2.uniform(0.0, 2.0 * std::f64::consts::PI);
            let s = (1.0 - z * z).sqrt();
            expect += (s * phi.cos()).clamp(-1.0, 1.0).acos();
        }
        let expect = (expect / m as f64).to_degrees();
        let est = field_from(normals, n, 1);
        let got = mean_angle_error(&est, &truth).unwrap();
        assert!((got - expect).abs() < 2.0, "got {got}, expected {expect}");
    }
}
