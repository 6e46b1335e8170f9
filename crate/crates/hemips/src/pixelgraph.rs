//! Normalized intensity vectors and their mutual k-NN graph.
//!
//! Each unmasked pixel contributes the vector of its intensities across the
//! stack, normalized to unit length (which factors out albedo). Local
//! distances between these vectors stand in for geodesic distances between
//! the unknown normals. Neighborhoods are the k nearest in that metric, made
//! symmetric by an AND relation; pixels whose chosen neighbors mostly do not
//! choose them back are dropped as outliers before the AND step.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::render::ImageStack;

/// Retained pixels and their unit intensity vectors.
#[derive(Clone, Debug)]
pub struct NormalizedVectors {
    pub width: usize,
    pub height: usize,
    /// Grid index of each retained pixel.
    pub pixels: Vec<usize>,
    pub vectors: Vec<Vec<f64>>,
    /// Grid indices excluded because the raw vector was (near) zero.
    pub dark: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct PixelGraph {
    pub width: usize,
    pub height: usize,
    /// Grid index of each node.
    pub pixels: Vec<usize>,
    pub vectors: Vec<Vec<f64>>,
    /// Symmetric (post-AND) neighbor lists, node indices.
    pub neighbors: Vec<Vec<usize>>,
    /// Distances aligned with `neighbors`.
    pub distances: Vec<Vec<f64>>,
    /// Pre-AND reciprocity fraction per node.
    pub favor: Vec<f64>,
    /// Directed k-NN choices (pre-AND), kept for outlier filtering.
    pub(crate) chosen: Vec<Vec<usize>>,
    pub dark: Vec<usize>,
    /// Grid indices dropped from the graph (outliers, demoted pixels).
    pub removed: Vec<usize>,
}

/// Default neighborhood size: a fraction of the retained pixels, capped for
/// tractability on large images.
pub fn default_k(n_retained: usize, k_fraction: f64, k_cap: usize) -> usize {
    ((n_retained as f64 * k_fraction).ceil() as usize).clamp(1, k_cap)
}

/// `v_p -> v_p / ||v_p||` per unmasked pixel; pixels darker than `eps_zero`
/// are excluded rather than failing.
pub fn build_vectors(stack: &ImageStack, eps_zero: f64) -> Result<NormalizedVectors> {
    if stack.image_count() < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 images, got {}",
            stack.image_count()
        )));
    }
    let npx = stack.width * stack.height;
    let mut pixels = Vec::new();
    let mut vectors = Vec::new();
    let mut dark = Vec::new();
    for i in 0..npx {
        if !stack.mask[i] {
            continue;
        }
        let v: Vec<f64> = stack.images.iter().map(|img| img[i]).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < eps_zero {
            dark.push(i);
            continue;
        }
        pixels.push(i);
        vectors.push(v.into_iter().map(|x| x / n).collect());
    }
    if pixels.is_empty() {
        return Err(Error::EmptyGraph("every masked pixel is dark".into()));
    }
    Ok(NormalizedVectors {
        width: stack.width,
        height: stack.height,
        pixels,
        vectors,
        dark,
    })
}

fn direct_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact brute-force k-NN over the normalized vectors, then the mutual AND.
pub fn build_neighborhoods(v: &NormalizedVectors, k: usize) -> Result<PixelGraph> {
    let n = v.pixels.len();
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if n <= k {
        return Err(Error::InvalidInput(format!(
            "k = {k} needs more than k pixels, got {n}"
        )));
    }
    let dim = v.vectors[0].len();
    let flat: Vec<f64> = v.vectors.iter().flat_map(|r| r.iter().copied()).collect();

    // Unit vectors: ||a - b||² = 2 - 2 <a, b>. The Gram products drive the
    // selection; stored distances are recomputed by direct subtraction below.
    let chosen: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let row_p = &flat[p * dim..(p + 1) * dim];
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for q in 0..n {
                if q == p {
                    continue;
                }
                let row_q = &flat[q * dim..(q + 1) * dim];
                let g: f64 = row_p.iter().zip(row_q).map(|(a, b)| a * b).sum();
                let d2 = (2.0 - 2.0 * g).max(0.0);
                if best.len() < k {
                    best.push((d2, q));
                    if best.len() == k {
                        best.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    }
                } else if d2 < best[0].0 || (d2 == best[0].0 && q < best[0].1) {
                    best[0] = (d2, q);
                    let mut i = 0;
                    while i + 1 < best.len()
                        && (best[i].0 < best[i + 1].0
                            || (best[i].0 == best[i + 1].0 && best[i].1 > best[i + 1].1))
                    {
                        best.swap(i, i + 1);
                        i += 1;
                    }
                }
            }
            let mut ids: Vec<usize> = best.into_iter().map(|(_, q)| q).collect();
            ids.sort_unstable();
            ids
        })
        .collect();

    finish_graph(v.width, v.height, &v.pixels, &v.vectors, chosen, v.dark.clone(), Vec::new())
}

/// AND-symmetrize directed choices, compute favor fractions and exact
/// neighbor distances.
fn finish_graph(
    width: usize,
    height: usize,
    pixels: &[usize],
    vectors: &[Vec<f64>],
    chosen: Vec<Vec<usize>>,
    dark: Vec<usize>,
    removed: Vec<usize>,
) -> Result<PixelGraph> {
    let n = pixels.len();
    let favor: Vec<f64> = (0..n)
        .map(|p| {
            if chosen[p].is_empty() {
                return 0.0;
            }
            let reciprocating = chosen[p]
                .iter()
                .filter(|&&q| chosen[q].binary_search(&p).is_ok())
                .count();
            reciprocating as f64 / chosen[p].len() as f64
        })
        .collect();

    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|p| {
            chosen[p]
                .iter()
                .copied()
                .filter(|&q| chosen[q].binary_search(&p).is_ok())
                .collect()
        })
        .collect();
    let distances: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            neighbors[p]
                .iter()
                .map(|&q| direct_distance(&vectors[p], &vectors[q]))
                .collect()
        })
        .collect();

    Ok(PixelGraph {
        width,
        height,
        pixels: pixels.to_vec(),
        vectors: vectors.to_vec(),
        neighbors,
        distances,
        favor,
        chosen,
        dark,
        removed,
    })
}

/// Drops pixels whose pre-AND reciprocity is below `favor_threshold`, then
/// re-symmetrizes the survivors. Removed pixels are recorded so their
/// normals can be interpolated later.
pub fn remove_outliers(graph: &PixelGraph, favor_threshold: f64) -> Result<PixelGraph> {
    let n = graph.pixels.len();
    let keep: Vec<usize> = (0..n).filter(|&p| graph.favor[p] >= favor_threshold).collect();
    if keep.len() == n {
        return Ok(graph.clone());
    }
    if keep.is_empty() {
        return Err(Error::EmptyGraph("outlier filter removed every pixel".into()));
    }
    let mut new_id = vec![usize::MAX; n];
    for (new, &old) in keep.iter().enumerate() {
        new_id[old] = new;
    }
    let pixels: Vec<usize> = keep.iter().map(|&p| graph.pixels[p]).collect();
    let vectors: Vec<Vec<f64>> = keep.iter().map(|&p| graph.vectors[p].clone()).collect();
    let chosen: Vec<Vec<usize>> = keep
        .iter()
        .map(|&p| {
            graph.chosen[p]
                .iter()
                .filter_map(|&q| (new_id[q] != usize::MAX).then(|| new_id[q]))
                .collect()
        })
        .collect();
    let mut removed = graph.removed.clone();
    removed.extend((0..n).filter(|&p| new_id[p] == usize::MAX).map(|p| graph.pixels[p]));
    finish_graph(graph.width, graph.height, &pixels, &vectors, chosen, graph.dark.clone(), removed)
}

impl PixelGraph {
    pub fn node_count(&self) -> usize {
        self.pixels.len()
    }

    /// Drops the given node ids (e.g. pixels demoted by the weight solver).
    pub fn without_nodes(&self, drop: &[usize]) -> Result<PixelGraph> {
        let n = self.pixels.len();
        let mut dropped = vec![false; n];
        for &d in drop {
            dropped[d] = true;
        }
        let keep: Vec<usize> = (0..n).filter(|&p| !dropped[p]).collect();
        if keep.is_empty() {
            return Err(Error::EmptyGraph("all nodes dropped".into()));
        }
        let mut new_id = vec![usize::MAX; n];
        for (new, &old) in keep.iter().enumerate() {
            new_id[old] = new;
        }
        let pixels: Vec<usize> = keep.iter().map(|&p| self.pixels[p]).collect();
        let vectors: Vec<Vec<f64>> = keep.iter().map(|&p| self.vectors[p].clone()).collect();
        let chosen: Vec<Vec<usize>> = keep
            .iter()
            .map(|&p| {
                self.chosen[p]
                    .iter()
                    .filter_map(|&q| (new_id[q] != usize::MAX).then(|| new_id[q]))
                    .collect()
            })
            .collect();
        let mut removed = self.removed.clone();
        removed.extend(drop.iter().map(|&p| self.pixels[p]));
        finish_graph(self.width, self.height, &pixels, &vectors, chosen, self.dark.clone(), removed)
    }

    /// Edge list (p, q, d) with p < q, for debugging dumps.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for p in 0..self.node_count() {
            for (i, &q) in self.neighbors[p].iter().enumerate() {
                if p < q {
                    out.push((p, q, self.distances[p][i]));
                }
            }
        }
        out
    }

    pub fn write_edge_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "p,q,d")?;
        for (p, q, d) in self.edges() {
            writeln!(w, "{},{},{:.17e}", self.pixels[p], self.pixels[q], d)?;
        }
        Ok(())
    }
}
