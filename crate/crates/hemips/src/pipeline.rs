//! End-to-end reconstruction: images in, normals and depth out.
//!
//! Stages: normalized intensity vectors, mutual k-NN graph with outlier
//! filtering, geodesic equator detection, tangent charts, the global weight
//! program (boundary rows exempt), Dirichlet and Neumann operators, the
//! leading eigenvectors, normal assembly, integrability rotation, and
//! masked depth integration. All of it is uncalibrated: light directions
//! are never read.

use std::time::Instant;

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::equator::{flatten_and_peel, geodesics};
use crate::error::{Error, Result};
use crate::laplacian::{
    assemble, neumann_weights, prepare_charts, solve_weights_outcome, LaplacianSet, SolveOutcome,
    WeightSolution,
};
use crate::pixelgraph::{build_neighborhoods, build_vectors, default_k, remove_outliers, PixelGraph};
use crate::reconstruct::{
    assemble_normals, integrate_depth, negate_tangential, resolve_rotation, DepthMap, NormalField,
};
use crate::render::ImageStack;
use crate::spectral::smallest_eigenpairs;

#[derive(Clone, Debug, Default, Serialize)]
pub struct StageTimings {
    pub vectors_s: f64,
    pub graph_s: f64,
    pub equator_s: f64,
    pub weights_s: f64,
    pub eigen_s: f64,
    pub assemble_s: f64,
    pub rotation_s: f64,
    pub depth_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub nodes: usize,
    pub dark_pixels: usize,
    pub removed_pixels: usize,
    pub dropped_disconnected: usize,
    pub k: usize,
    pub boundary_count: usize,
    pub dirichlet_eigenvalues: Vec<f64>,
    pub neumann_eigenvalues: Vec<f64>,
    pub dirichlet_residuals: Vec<f64>,
    pub neumann_residuals: Vec<f64>,
    pub weight_iterations: usize,
    pub weight_equality_residual: f64,
    pub rotation_angle_deg: f64,
    pub reflected: bool,
    pub integrability_before: f64,
    pub integrability_after: f64,
    pub convex: bool,
    pub depth_negated: bool,
    pub cg_residual: f64,
    pub cg_iterations: usize,
    pub timings: StageTimings,
    /// The exact configuration (every tolerance) the run used.
    pub config: PipelineConfig,
}

pub struct PipelineOutput {
    pub normals: NormalField,
    pub depth: DepthMap,
    pub report: PipelineReport,
    pub graph: PixelGraph,
    pub operators: LaplacianSet,
    pub weights: WeightSolution,
}

fn stage_err(stage: &str, e: Error) -> Error {
    match e {
        Error::Io(_) | Error::Json(_) => e,
        other => Error::Numerical(format!("{stage}: {other}")),
    }
}

/// Runs the whole reconstruction on an image stack.
pub fn reconstruct_stack(stack: &ImageStack, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let vectors = build_vectors(stack, cfg.eps_zero).map_err(|e| stage_err("vectors", e))?;
    timings.vectors_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let k = default_k(vectors.pixels.len(), cfg.k_fraction, cfg.k_cap).max(3);
    let graph = build_neighborhoods(&vectors, k).map_err(|e| stage_err("neighborhoods", e))?;
    let graph = remove_outliers(&graph, cfg.favor_threshold)
        .map_err(|e| stage_err("outlier filter", e))?;
    timings.graph_s = t.elapsed().as_secs_f64();

    // geodesic flattening needs a connected graph; restrict to the giant
    // component first
    let t = Instant::now();
    let mut graph = graph;
    let mut table = geodesics(&graph).map_err(|e| stage_err("geodesics", e))?;
    let dropped_disconnected = table.dropped;
    if table.dropped > 0 {
        let keep: Vec<bool> = {
            let mut k = vec![false; graph.node_count()];
            for &p in &table.kept {
                k[p] = true;
            }
            k
        };
        let drop: Vec<usize> = (0..graph.node_count()).filter(|&p| !keep[p]).collect();
        graph = graph.without_nodes(&drop).map_err(|e| stage_err("geodesics", e))?;
        table = geodesics(&graph).map_err(|e| stage_err("geodesics", e))?;
    }
    let eigen_opts = cfg.eigen_options();
    let boundary = flatten_and_peel(&table, cfg.boundary_fraction, &eigen_opts)
        .map_err(|e| stage_err("equator detection", e))?;
    timings.equator_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (graph, charts, mut boundary) =
        prepare_charts(graph, &boundary).map_err(|e| stage_err("charts", e))?;
    let weight_opts = cfg.weight_options()?;
    let mut solution = None;
    for _ in 0..6 {
        match solve_weights_outcome(&charts, &boundary, &weight_opts)
            .map_err(|e| stage_err("weights", e))?
        {
            SolveOutcome::Converged(sol) => {
                solution = Some(sol);
                break;
            }
            SolveOutcome::Stuck { rows, residual, iterations } => {
                if rows.is_empty() {
                    return Err(Error::NoConvergence(format!(
                        "weights: equality residual {residual:.3e} after {iterations} iterations"
                    )));
                }
                // nearly one-sided rows sit on the sampled rim; treat them
                // as boundary and retry
                boundary.extend(rows);
                boundary.sort_unstable();
                boundary.dedup();
            }
        }
    }
    let solution = solution.ok_or_else(|| {
        Error::NoConvergence("weights: projections kept stalling after boundary absorption".into())
    })?;
    timings.weights_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let l = crate::laplacian::laplacian_from_weights(&solution.weights);
    let mut is_boundary = vec![false; graph.node_count()];
    for &b in &boundary {
        is_boundary[b] = true;
    }
    let interior: Vec<usize> = (0..graph.node_count()).filter(|&p| !is_boundary[p]).collect();
    if interior.is_empty() {
        return Err(Error::EmptyGraph("every pixel was labeled boundary".into()));
    }
    let l_d = l.principal_submatrix(&interior);
    let dirichlet =
        smallest_eigenpairs(&l_d, 4, &eigen_opts).map_err(|e| stage_err("dirichlet eigen", e))?;
    // z extended by its boundary zeros, sign fixed for the reflection fit
    let mut z_ext = vec![0.0; graph.node_count()];
    let mut mean = 0.0;
    for (i, &node) in interior.iter().enumerate() {
        z_ext[node] = dirichlet.vectors[0][i];
        mean += z_ext[node];
    }
    if mean < 0.0 {
        for v in z_ext.iter_mut() {
            *v = -*v;
        }
    }
    let w_n = neumann_weights(&solution.weights, &charts, &boundary, &z_ext, &solution.row_sums)
        .map_err(|e| stage_err("neumann weights", e))?;
    let operators = assemble(&solution.weights, &w_n, &boundary);
    let neumann = smallest_eigenpairs(&operators.neumann, 5, &eigen_opts)
        .map_err(|e| stage_err("neumann eigen", e))?;
    timings.eigen_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let field = assemble_normals(
        stack.width,
        stack.height,
        &stack.mask,
        &graph.pixels,
        &interior,
        &dirichlet.vectors[0],
        &neumann.vectors[1],
        &neumann.vectors[2],
        cfg.z_floor,
    )
    .map_err(|e| stage_err("normal assembly", e))?;
    timings.assemble_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (field, rotation) = resolve_rotation(&field);
    timings.rotation_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let depth =
        integrate_depth(&field, cfg.convexity()?).map_err(|e| stage_err("depth integration", e))?;
    let field = if depth.negated { negate_tangential(&field) } else { field };
    timings.depth_s = t.elapsed().as_secs_f64();

    let report = PipelineReport {
        nodes: graph.node_count(),
        dark_pixels: graph.dark.len(),
        removed_pixels: graph.removed.len(),
        dropped_disconnected,
        k,
        boundary_count: boundary.len(),
        dirichlet_eigenvalues: dirichlet.values.clone(),
        neumann_eigenvalues: neumann.values.clone(),
        dirichlet_residuals: dirichlet.residuals.clone(),
        neumann_residuals: neumann.residuals.clone(),
        weight_iterations: solution.diagnostics.iterations,
        weight_equality_residual: solution.diagnostics.max_equality_residual,
        rotation_angle_deg: rotation.angle_rad.to_degrees(),
        reflected: rotation.reflected,
        integrability_before: rotation.residual_before,
        integrability_after: rotation.residual_after,
        convex: depth.convex,
        depth_negated: depth.negated,
        cg_residual: depth.cg_residual,
        cg_iterations: depth.cg_iterations,
        timings,
        config: cfg.clone(),
    };
    Ok(PipelineOutput { normals: field, depth, report, graph, operators, weights: solution })
}
