//! Local tangent-plane parameterizations.
//!
//! Each pixel's neighborhood (the pixel and its graph neighbors) is projected
//! to two dimensions with PCA; the projected coordinates approximate the
//! tangent plane of the normal hemisphere at that pixel, and the planar
//! Laplacian built on them approximates the Laplace-Beltrami operator.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::pixelgraph::PixelGraph;

#[derive(Clone, Debug)]
pub struct TangentChart {
    /// Neighbor node ids, aligned with the coordinate arrays.
    pub neighbors: Vec<usize>,
    /// Center's own chart coordinates.
    pub center_uv: (f64, f64),
    /// Neighbors' chart coordinates.
    pub uv: Vec<(f64, f64)>,
    /// Max planar distance of a neighbor from the center.
    pub radius: f64,
    /// Rank-deficient neighborhood (collinear or too small); the pixel is
    /// demoted instead of receiving weights.
    pub degenerate: bool,
}

impl TangentChart {
    /// Displacements (n_q^u - n_p^u, n_q^v - n_p^v).
    pub fn displacements(&self) -> Vec<(f64, f64)> {
        self.uv
            .iter()
            .map(|&(u, v)| (u - self.center_uv.0, v - self.center_uv.1))
            .collect()
    }

    /// True when the origin cannot be written as a convex combination of the
    /// displacement vectors, i.e. every neighbor lies strictly on one side of
    /// some line through the center. The weight program has no solution for
    /// such a row.
    pub fn is_infeasible(&self) -> bool {
        let deltas = self.displacements();
        if deltas.len() < 2 {
            return true;
        }
        // A zero displacement can absorb any row-sum mass.
        if deltas.iter().any(|&(u, v)| u == 0.0 && v == 0.0) {
            return false;
        }
        let mut angles: Vec<f64> = deltas.iter().map(|&(u, v)| v.atan2(u)).collect();
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut max_gap = angles[0] + 2.0 * std::f64::consts::PI - angles[angles.len() - 1];
        for w in angles.windows(2) {
            max_gap = max_gap.max(w[1] - w[0]);
        }
        max_gap > std::f64::consts::PI + 1e-9
    }
}

/// PCA chart for one neighborhood of high-dimensional points. `points[0]` is
/// the center; the returned coordinates match the input order.
fn pca_chart(points: &[&[f64]]) -> (Vec<(f64, f64)>, bool) {
    let m = points.len();
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for p in points {
        for (acc, &x) in mean.iter_mut().zip(p.iter()) {
            *acc += x;
        }
    }
    for x in mean.iter_mut() {
        *x /= m as f64;
    }
    let centered = DMatrix::from_fn(m, dim, |i, j| points[i][j] - mean[j]);
    let svd = centered.clone().svd(false, true);
    let vt = svd.v_t.as_ref().expect("svd computed with V^T");
    let coords: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let mut u = 0.0;
            let mut v = 0.0;
            for j in 0..dim {
                u += centered[(i, j)] * vt[(0, j)];
                if vt.nrows() > 1 {
                    v += centered[(i, j)] * vt[(1, j)];
                }
            }
            (u, v)
        })
        .collect();
    let s0 = svd.singular_values.get(0).copied().unwrap_or(0.0);
    let s1 = svd.singular_values.get(1).copied().unwrap_or(0.0);
    let degenerate = s1 <= 1e-10 * s0.max(1e-300) || s0 == 0.0;
    (coords, degenerate)
}

/// Builds a PCA chart per node of the graph. Neighborhoods with fewer than 3
/// neighbors are flagged degenerate.
pub fn build_charts(graph: &PixelGraph) -> Vec<TangentChart> {
    (0..graph.node_count())
        .into_par_iter()
        .map(|p| {
            let neigh = &graph.neighbors[p];
            if neigh.len() < 3 {
                return TangentChart {
                    neighbors: neigh.clone(),
                    center_uv: (0.0, 0.0),
                    uv: vec![(0.0, 0.0); neigh.len()],
                    radius: 0.0,
                    degenerate: true,
                };
            }
            let mut points: Vec<&[f64]> = Vec::with_capacity(neigh.len() + 1);
            points.push(&graph.vectors[p]);
            for &q in neigh {
                points.push(&graph.vectors[q]);
            }
            let (coords, degenerate) = pca_chart(&points);
            let center_uv = coords[0];
            let uv: Vec<(f64, f64)> = coords[1..].to_vec();
            let radius = uv
                .iter()
                .map(|&(u, v)| ((u - center_uv.0).powi(2) + (v - center_uv.1).powi(2)).sqrt())
                .fold(0.0, f64::max);
            TangentChart { neighbors: neigh.clone(), center_uv, uv, radius, degenerate }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn chart_of(points: Vec<Vec<f64>>) -> (Vec<(f64, f64)>, bool) {
        let refs: Vec<&[f64]> = points.iter().map(|p| p.as_slice()).collect();
        pca_chart(&refs)
    }

    #[test]
    fn coplanar_points_keep_distances_exactly() {
        let mut rng = Rng::new(2);
        // random plane in R^5
        let a: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let points: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                let (s, t) = (rng.normal(), rng.normal());
                (0..5).map(|j| 0.3 + s * a[j] + t * b[j]).collect()
            })
            .collect();
        let (coords, degenerate) = chart_of(points.clone());
        assert!(!degenerate);
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                let d_high: f64 = points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                let d_chart = ((coords[i].0 - coords[j].0).powi(2)
                    + (coords[i].1 - coords[j].1).powi(2))
                .sqrt();
                assert!((d_high - d_chart).abs() < 1e-10, "{d_high} vs {d_chart}");
            }
        }
    }

    #[test]
    fn hemisphere_patch_matches_geodesics() {
        // points on a spherical cap of angular radius 0.1 around +z
        let mut rng = Rng::new(4);
        let mut points = vec![vec![0.0, 0.0, 1.0]];
        for _ in 0..30 {
            let t = 0.1 * rng.next_f64().sqrt();
            let phi = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
            points.push(vec![t.sin() * phi.cos(), t.sin() * phi.sin(), t.cos()]);
        }
        let (coords, degenerate) = chart_of(points.clone());
        assert!(!degenerate);
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                let dot: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| a * b).sum();
                let geo = dot.clamp(-1.0, 1.0).acos();
                let d_chart = ((coords[i].0 - coords[j].0).powi(2)
                    + (coords[i].1 - coords[j].1).powi(2))
                .sqrt();
                if geo > 1e-6 {
                    assert!(
                        (d_chart - geo).abs() / geo < 0.005,
                        "chart {d_chart} vs geodesic {geo}"
                    );
                }
            }
        }
    }

    #[test]
    fn radius_is_max_neighbor_distance() {
        let chart = TangentChart {
            neighbors: vec![1, 2, 3],
            center_uv: (1.0, 1.0),
            uv: vec![(2.0, 1.0), (1.0, 4.0), (0.5, 1.0)],
            radius: 3.0,
            degenerate: false,
        };
        let max = chart
            .displacements()
            .iter()
            .map(|&(u, v)| (u * u + v * v).sqrt())
            .fold(0.0, f64::max);
        assert_eq!(max, chart.radius);
    }

    #[test]
    fn identical_vectors_are_degenerate() {
        let points = vec![vec![0.5, 0.5, 0.5]; 6];
        let (_, degenerate) = chart_of(points);
        assert!(degenerate);
    }

    #[test]
    fn collinear_vectors_are_degenerate() {
        let points: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
        let (_, degenerate) = chart_of(points);
        assert!(degenerate);
    }

    #[test]
    fn one_sided_neighborhood_is_infeasible() {
        let chart = TangentChart {
            neighbors: vec![1, 2, 3],
            center_uv: (0.0, 0.0),
            uv: vec![(1.0, 0.1), (1.0, -0.1), (0.5, 0.3)],
            radius: 1.0,
            degenerate: false,
        };
        assert!(chart.is_infeasible());
        let balanced = TangentChart {
            neighbors: vec![1, 2, 3],
            center_uv: (0.0, 0.0),
            uv: vec![(1.0, 0.1), (-1.0, -0.1), (0.5, 0.3)],
            radius: 1.0,
            degenerate: false,
        };
        assert!(!balanced.is_infeasible());
    }
}
