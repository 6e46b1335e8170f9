//! Equator detection by geodesic flattening.
//!
//! Shortest-path distances over the neighbor graph approximate geodesics on
//! the normal hemisphere. A tangent transform stretches the large distances
//! so the manifold flattens into a disc, classical MDS embeds it in the
//! plane, and repeated convex-hull peeling labels boundary points until the
//! target fraction is reached.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mds::classical_mds;
use crate::pixelgraph::PixelGraph;
use crate::spectral::EigenOptions;

/// All-pairs shortest-path distances over a neighbor graph, restricted to
/// the largest connected component.
#[derive(Clone, Debug)]
pub struct GeodesicTable {
    pub n: usize,
    /// Row-major n x n distances over `kept`.
    pub d: Vec<f64>,
    pub d_max: f64,
    /// Node ids (into the source graph) of the retained component.
    pub kept: Vec<usize>,
    /// Nodes outside the largest component.
    pub dropped: usize,
}

#[derive(PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn largest_component(adj: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let n = adj.len();
    let mut comp = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut stack = vec![start];
        comp[start] = id;
        let mut size = 0usize;
        while let Some(p) = stack.pop() {
            size += 1;
            for &q in &adj[p] {
                if comp[q] == usize::MAX {
                    comp[q] = id;
                    stack.push(q);
                }
            }
        }
        sizes.push(size);
    }
    let best = (0..sizes.len()).max_by_key(|&i| sizes[i]).unwrap();
    let kept: Vec<usize> = (0..n).filter(|&p| comp[p] == best).collect();
    let dropped = n - kept.len();
    (kept, dropped)
}

/// Dijkstra from every node (edge lengths are the stored intensity
/// distances). A disconnected graph is restricted to its largest component,
/// with the dropped count reported in the table.
pub fn geodesics(graph: &PixelGraph) -> Result<GeodesicTable> {
    let (kept, dropped) = largest_component(&graph.neighbors);
    let n = kept.len();
    if n < 2 {
        return Err(Error::EmptyGraph("geodesic table needs at least 2 connected nodes".into()));
    }
    let mut local = vec![usize::MAX; graph.node_count()];
    for (i, &p) in kept.iter().enumerate() {
        local[p] = i;
    }
    let adj: Vec<Vec<(usize, f64)>> = kept
        .iter()
        .map(|&p| {
            graph.neighbors[p]
                .iter()
                .zip(&graph.distances[p])
                .map(|(&q, &w)| (local[q], w))
                .collect()
        })
        .collect();

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|src| {
            let mut dist = vec![f64::INFINITY; n];
            let mut heap = BinaryHeap::new();
            dist[src] = 0.0;
            heap.push(Reverse((OrdF64(0.0), src)));
            while let Some(Reverse((OrdF64(d), p))) = heap.pop() {
                if d > dist[p] {
                    continue;
                }
                for &(q, w) in &adj[p] {
                    let nd = d + w;
                    if nd < dist[q] {
                        dist[q] = nd;
                        heap.push(Reverse((OrdF64(nd), q)));
                    }
                }
            }
            dist
        })
        .collect();

    let mut d = Vec::with_capacity(n * n);
    let mut d_max = 0.0f64;
    for row in rows {
        for &v in &row {
            if !v.is_finite() {
                return Err(Error::Numerical("infinite distance inside a component".into()));
            }
            d_max = d_max.max(v);
        }
        d.extend(row);
    }
    Ok(GeodesicTable { n, d, d_max, kept, dropped })
}

/// Builds a table directly from known pairwise distances (for synthetic
/// inputs with exact geodesics).
pub fn table_from_distances(d: Vec<f64>, n: usize) -> Result<GeodesicTable> {
    if d.len() != n * n {
        return Err(Error::InvalidInput("distance matrix size mismatch".into()));
    }
    let d_max = d.iter().copied().fold(0.0, f64::max);
    Ok(GeodesicTable { n, d, d_max, kept: (0..n).collect(), dropped: 0 })
}

/// The distance stretch that flattens the hemisphere into a disc. The
/// argument stays strictly below pi/2 because eps > 0.
pub fn flatten_transform(d: f64, d_max: f64) -> f64 {
    let eps = 0.01 * d_max;
    (d * std::f64::consts::PI / (2.0 * d_max + eps)).tan()
}

/// Strict convex hull (vertices only) by monotone chain; returns positions
/// into `pts`.
fn convex_hull(pts: &[(f64, f64, usize)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| {
        (pts[a].0, pts[a].1)
            .partial_cmp(&(pts[b].0, pts[b].1))
            .unwrap()
    });
    if pts.len() <= 2 {
        return order;
    }
    let cross = |o: usize, a: usize, b: usize| -> f64 {
        (pts[a].0 - pts[o].0) * (pts[b].1 - pts[o].1)
            - (pts[a].1 - pts[o].1) * (pts[b].0 - pts[o].0)
    };
    let mut hull: Vec<usize> = Vec::new();
    for &i in &order {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], i) <= 0.0 {
            hull.pop();
        }
        hull.push(i);
    }
    let lower_len = hull.len() + 1;
    for &i in order.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], i) <= 0.0
        {
            hull.pop();
        }
        hull.push(i);
    }
    hull.pop();
    hull.sort_unstable();
    hull.dedup();
    hull
}

/// Flattens the table with the tangent transform, embeds to 2d by classical
/// MDS, and peels convex hulls until at least `target_fraction` of the
/// points are labeled boundary (the peel that crosses the threshold is
/// included whole). Returns node ids into the table's source graph.
pub fn flatten_and_peel(
    table: &GeodesicTable,
    target_fraction: f64,
    eigen_opts: &EigenOptions,
) -> Result<Vec<usize>> {
    let n = table.n;
    if !(0.0 < target_fraction) {
        return Err(Error::InvalidInput("target fraction must be positive".into()));
    }
    if target_fraction >= 1.0 {
        return Ok(table.kept.clone());
    }
    let stretched: Vec<f64> = table.d.iter().map(|&d| flatten_transform(d, table.d_max)).collect();
    let coords = classical_mds(&stretched, n, 2, eigen_opts)?;

    let target = (n as f64 * target_fraction).ceil() as usize;
    let mut active: Vec<(f64, f64, usize)> =
        coords.iter().enumerate().map(|(i, c)| (c[0], c[1], i)).collect();
    let mut boundary: Vec<usize> = Vec::new();
    while boundary.len() < target && !active.is_empty() {
        let hull = convex_hull(&active);
        if hull.is_empty() {
            break;
        }
        for &h in &hull {
            boundary.push(table.kept[active[h].2]);
        }
        let mut on_hull = vec![false; active.len()];
        for &h in &hull {
            on_hull[h] = true;
        }
        active = active
            .into_iter()
            .enumerate()
            .filter_map(|(i, p)| (!on_hull[i]).then_some(p))
            .collect();
    }
    boundary.sort_unstable();
    Ok(boundary)
}
