//! The discrete Laplace-Beltrami operator.
//!
//! Weights solve one global program: minimize the squared weight norm subject
//! to, per pixel, linear precision in the chart coordinates (the row applied
//! to the functions u and v gives zero), a prescribed row sum, nonnegativity,
//! and symmetry across rows. The program is the projection of the origin onto
//! the intersection of an affine set (the per-row equalities) and a closed
//! convex cone (symmetric nonnegative matrices), computed with Dykstra's
//! alternating projections; starting from zero makes the limit exactly the
//! minimum-norm feasible point. The affine projections are independent per
//! row; the cone projection averages each weight with its transpose partner
//! and clamps at zero.
//!
//! From the solved weights W, the operator is L = D - W with D the diagonal
//! of row sums. The Dirichlet variant is the interior principal block of L
//! (equivalent to replacing boundary rows with scaled identity rows, for
//! eigenpairs whose eigenvalue differs from that scale). The Neumann variant
//! re-solves each boundary row on its neighborhood doubled by reflection
//! across the locally estimated equator line and folds the tied ghost
//! weights back onto the originals.

use rayon::prelude::*;

use crate::chart::{build_charts, TangentChart};
use crate::error::{Error, Result};
use crate::pixelgraph::PixelGraph;
use crate::sparse::SparseMat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowSumMode {
    /// s_p = 1 for every row (the experimentally preferred choice).
    ConstantOne,
    /// s_p = 1 / r_p² with r_p the chart radius.
    InverseRadiusSq,
}

#[derive(Clone, Debug)]
pub struct WeightOptions {
    pub row_sum_mode: RowSumMode,
    /// Constraint residual target (and entry-change stopping scale).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for WeightOptions {
    fn default() -> Self {
        WeightOptions { row_sum_mode: RowSumMode::ConstantOne, tol: 1e-8, max_iter: 5000 }
    }
}

#[derive(Clone, Debug)]
pub struct WeightDiagnostics {
    pub iterations: usize,
    pub max_change: f64,
    /// Worst per-row violation of the three equality constraints.
    pub max_equality_residual: f64,
    /// Exact zeros by construction; reported for the record.
    pub max_asymmetry: f64,
    pub min_weight: f64,
}

#[derive(Clone, Debug)]
pub struct WeightSolution {
    pub weights: SparseMat,
    /// Row-sum targets actually used.
    pub row_sums: Vec<f64>,
    pub diagnostics: WeightDiagnostics,
}

/// Builds charts for the graph and deals with interior rows the weight
/// program cannot serve (degenerate neighborhoods and rows whose
/// displacements lie strictly on one side of a line). Such a row adjacent to
/// the boundary is a rim point the detected band missed and is absorbed into
/// the boundary; an isolated one is demoted to an outlier. Boundary rows are
/// exempt from the checks: they never join the program (their operator rows
/// come from the Dirichlet replacement or the Neumann reflection), and
/// keeping them as columns is what makes near-boundary interior rows
/// feasible. The returned boundary set is remapped to the surviving node
/// ids.
pub fn prepare_charts(
    mut graph: PixelGraph,
    boundary: &[usize],
) -> Result<(PixelGraph, Vec<TangentChart>, Vec<usize>)> {
    let mut boundary_pixels: Vec<usize> = boundary.iter().map(|&b| graph.pixels[b]).collect();
    boundary_pixels.sort_unstable();
    loop {
        let charts = build_charts(&graph);
        let is_boundary: Vec<bool> = (0..graph.node_count())
            .map(|p| boundary_pixels.binary_search(&graph.pixels[p]).is_ok())
            .collect();
        let mut to_delete: Vec<usize> = Vec::new();
        let mut absorbed = false;
        for (p, c) in charts.iter().enumerate() {
            if is_boundary[p] || !(c.degenerate || c.is_infeasible() || row_gram(c).is_none()) {
                continue;
            }
            if graph.neighbors[p].iter().any(|&q| is_boundary[q]) {
                boundary_pixels.push(graph.pixels[p]);
                absorbed = true;
            } else {
                to_delete.push(p);
            }
        }
        if absorbed {
            boundary_pixels.sort_unstable();
        }
        if to_delete.is_empty() && !absorbed {
            let boundary_nodes: Vec<usize> = (0..graph.node_count())
                .filter(|&p| is_boundary[p])
                .collect();
            return Ok((graph, charts, boundary_nodes));
        }
        if !to_delete.is_empty() {
            graph = graph.without_nodes(&to_delete)?;
        }
    }
}

/// Inverse of C Cᵀ for the row constraint matrix C = [du; dv; 1], or None
/// when it is numerically singular.
fn row_gram(chart: &TangentChart) -> Option<[f64; 9]> {
    let deltas = chart.displacements();
    let k = deltas.len() as f64;
    if deltas.len() < 3 {
        return None;
    }
    let (mut uu, mut uv, mut vv, mut su, mut sv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(u, v) in &deltas {
        uu += u * u;
        uv += u * v;
        vv += v * v;
        su += u;
        sv += v;
    }
    // symmetric 3x3: [[uu, uv, su], [uv, vv, sv], [su, sv, k]]
    let m = [uu, uv, su, uv, vv, sv, su, sv, k];
    invert3(&m)
}

fn invert3(m: &[f64; 9]) -> Option<[f64; 9]> {
    let det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6]);
    let scale = (m[0].abs() + m[4].abs() + m[8].abs()).powi(3).max(1e-300);
    if !det.is_finite() || det.abs() < 1e-13 * scale {
        return None;
    }
    let inv = [
        m[4] * m[8] - m[5] * m[7],
        m[2] * m[7] - m[1] * m[8],
        m[1] * m[5] - m[2] * m[4],
        m[5] * m[6] - m[3] * m[8],
        m[0] * m[8] - m[2] * m[6],
        m[2] * m[3] - m[0] * m[5],
        m[3] * m[7] - m[4] * m[6],
        m[1] * m[6] - m[0] * m[7],
        m[0] * m[4] - m[1] * m[3],
    ];
    Some(inv.map(|x| x / det))
}

pub fn row_sum_targets(charts: &[TangentChart], mode: RowSumMode) -> Vec<f64> {
    charts
        .iter()
        .map(|c| match mode {
            RowSumMode::ConstantOne => 1.0,
            RowSumMode::InverseRadiusSq => 1.0 / (c.radius * c.radius).max(1e-300),
        })
        .collect()
}

struct RowData {
    start: usize,
    du: Vec<f64>,
    dv: Vec<f64>,
    target: f64,
    inv: [f64; 9],
}

/// Outcome of the weight program: either a solution meeting the residual
/// target, or the set of rows whose constraints stalled the projections
/// (nearly infeasible neighborhoods; the caller demotes them and retries).
pub enum SolveOutcome {
    Converged(WeightSolution),
    Stuck { rows: Vec<usize>, residual: f64, iterations: usize },
}

/// Solves the global weight program on prepared charts; errors if the
/// projections stall (see `solve_weights_outcome` for the recoverable form).
pub fn solve_weights(
    charts: &[TangentChart],
    boundary: &[usize],
    opts: &WeightOptions,
) -> Result<WeightSolution> {
    match solve_weights_outcome(charts, boundary, opts)? {
        SolveOutcome::Converged(sol) => Ok(sol),
        SolveOutcome::Stuck { rows, residual, iterations } => Err(Error::NoConvergence(format!(
            "weight program: equality residual {residual:.3e} > {:.3e} after {iterations} \
             iterations ({} stuck rows, e.g. {:?})",
            opts.tol,
            rows.len(),
            &rows[..rows.len().min(5)]
        ))),
    }
}

/// Solves the global weight program on prepared charts. Rows in `boundary`
/// take no constraints and no variables; the program runs over interior rows
/// (whose variables include entries toward boundary columns), and boundary
/// rows of the returned matrix mirror the interior entries so W stays
/// symmetric. Errors if an interior chart is still degenerate or infeasible
/// (call `prepare_charts` first).
pub fn solve_weights_outcome(
    charts: &[TangentChart],
    boundary: &[usize],
    opts: &WeightOptions,
) -> Result<SolveOutcome> {
    let n = charts.len();
    let mut is_boundary = vec![false; n];
    for &b in boundary {
        is_boundary[b] = true;
    }
    let targets = row_sum_targets(charts, opts.row_sum_mode);
    let mut rows: Vec<Option<RowData>> = Vec::with_capacity(n);
    let mut start = 0usize;
    for (p, chart) in charts.iter().enumerate() {
        if is_boundary[p] {
            rows.push(None);
            continue;
        }
        if chart.degenerate || chart.is_infeasible() {
            return Err(Error::Degenerate(format!(
                "row {p} is degenerate or infeasible; demote it before solving"
            )));
        }
        let inv = row_gram(chart).ok_or_else(|| {
            Error::Degenerate(format!("row {p} has a singular constraint Gram matrix"))
        })?;
        let deltas = chart.displacements();
        rows.push(Some(RowData {
            start,
            du: deltas.iter().map(|d| d.0).collect(),
            dv: deltas.iter().map(|d| d.1).collect(),
            target: targets[p],
            inv,
        }));
        start += deltas.len();
    }
    let total = start;

    // Absolute position of each directed entry's transpose partner; entries
    // pointing at boundary columns have no partner in the program.
    let mut mate = vec![usize::MAX; total];
    for (p, chart) in charts.iter().enumerate() {
        let Some(row) = rows[p].as_ref() else { continue };
        for (i, &q) in chart.neighbors.iter().enumerate() {
            let Some(qrow) = rows[q].as_ref() else { continue };
            let j = charts[q].neighbors.iter().position(|&x| x == p).ok_or_else(|| {
                Error::InvalidInput(format!("neighbor lists are not symmetric at ({p}, {q})"))
            })?;
            mate[row.start + i] = qrow.start + j;
        }
    }
    let row_of_node: Vec<Option<usize>> = {
        let mut out = vec![None; n];
        let mut next = 0usize;
        for (p, r) in rows.iter().enumerate() {
            if r.is_some() {
                out[p] = Some(next);
                next += 1;
            }
        }
        out
    };
    let rows: Vec<RowData> = rows.into_iter().flatten().collect();

    let project_rows = |x: &mut Vec<f64>| {
        rows.par_iter().for_each(|row| {
            let k = row.du.len();
            // Safety: rows own disjoint slices [start, start+k).
            let slice = unsafe {
                std::slice::from_raw_parts_mut(x.as_ptr().add(row.start) as *mut f64, k)
            };
            let mut r0 = 0.0;
            let mut r1 = 0.0;
            let mut r2 = -row.target;
            for i in 0..k {
                r0 += slice[i] * row.du[i];
                r1 += slice[i] * row.dv[i];
                r2 += slice[i];
            }
            let m = &row.inv;
            let c0 = m[0] * r0 + m[1] * r1 + m[2] * r2;
            let c1 = m[3] * r0 + m[4] * r1 + m[5] * r2;
            let c2 = m[6] * r0 + m[7] * r1 + m[8] * r2;
            for i in 0..k {
                slice[i] -= c0 * row.du[i] + c1 * row.dv[i] + c2;
            }
        });
    };

    let row_residuals = |x: &[f64]| -> Vec<f64> {
        rows.par_iter()
            .map(|row| {
                let k = row.du.len();
                let slice = &x[row.start..row.start + k];
                let mut r0 = 0.0;
                let mut r1 = 0.0;
                let mut r2 = -row.target;
                for i in 0..k {
                    r0 += slice[i] * row.du[i];
                    r1 += slice[i] * row.dv[i];
                    r2 += slice[i];
                }
                r0.abs().max(r1.abs()).max(r2.abs())
            })
            .collect()
    };
    let equality_residual =
        |x: &[f64]| -> f64 { row_residuals(x).into_iter().fold(0.0, f64::max) };

    // Dykstra from the origin: corrections only for the (non-affine) cone.
    let mut z = vec![0.0; total];
    let mut corr = vec![0.0; total];
    let mut iterations = 0;
    let mut max_change = f64::INFINITY;
    let mut residual = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut y = z.clone();
        project_rows(&mut y);
        // add corrections, then project onto symmetric nonnegative matrices
        let zin: Vec<f64> = y.iter().zip(&corr).map(|(a, b)| a + b).collect();
        let new_z: Vec<f64> = (0..total)
            .into_par_iter()
            .map(|pos| {
                let m = mate[pos];
                if m == usize::MAX {
                    // entry toward a boundary column: only the nonnegativity
                    // constraint applies
                    zin[pos].max(0.0)
                } else {
                    ((zin[pos.min(m)] + zin[pos.max(m)]) * 0.5).max(0.0)
                }
            })
            .collect();
        for i in 0..total {
            corr[i] = zin[i] - new_z[i];
        }
        max_change = z
            .par_iter()
            .zip(new_z.par_iter())
            .map(|(a, b)| (a - b).abs())
            .reduce(|| 0.0, f64::max);
        z = new_z;
        if max_change < opts.tol {
            residual = equality_residual(&z);
            if residual <= opts.tol {
                break;
            }
        }
    }
    if !residual.is_finite() || residual > opts.tol {
        let per_row = row_residuals(&z);
        residual = per_row.iter().copied().fold(0.0, f64::max);
        if residual > opts.tol {
            // rows whose constraints are (nearly) unservable keep the whole
            // projection from settling; hand the worst offenders back for
            // demotion, capped so one round cannot eat the graph
            let node_of_row: Vec<usize> =
                (0..n).filter(|&p| row_of_node[p].is_some()).collect();
            let threshold = (0.5 * residual).max(opts.tol);
            let mut rows: Vec<(f64, usize)> = per_row
                .iter()
                .enumerate()
                .filter(|&(_, &r)| r >= threshold)
                .map(|(i, &r)| (r, node_of_row[i]))
                .collect();
            rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let cap = (node_of_row.len() / 100).max(8);
            rows.truncate(cap);
            let rows = rows.into_iter().map(|(_, p)| p).collect();
            return Ok(SolveOutcome::Stuck { rows, residual, iterations });
        }
    }

    let min_weight = z.iter().copied().fold(f64::INFINITY, f64::min);
    // Interior rows carry the solved entries; boundary rows mirror them so W
    // is symmetric (their operator rows are replaced downstream anyway).
    let mut sparse_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (p, chart) in charts.iter().enumerate() {
        let Some(r) = row_of_node[p] else { continue };
        for (i, &q) in chart.neighbors.iter().enumerate() {
            let w = z[rows[r].start + i];
            sparse_rows[p].push((q, w));
            if is_boundary[q] {
                sparse_rows[q].push((p, w));
            }
        }
    }
    let weights = SparseMat::from_rows(sparse_rows);
    Ok(SolveOutcome::Converged(WeightSolution {
        weights,
        row_sums: targets,
        diagnostics: WeightDiagnostics {
            iterations,
            max_change,
            max_equality_residual: residual,
            max_asymmetry: 0.0,
            min_weight,
        },
    }))
}

/// L = D - W with D the diagonal of row sums. Interior rows of L sum to zero
/// by construction.
pub fn laplacian_from_weights(w: &SparseMat) -> SparseMat {
    let n = w.dim();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|p| {
            let mut row: Vec<(usize, f64)> = w.row(p).map(|(q, v)| (q, -v)).collect();
            let d: f64 = w.row(p).map(|(_, v)| v).sum();
            row.push((p, d));
            row
        })
        .collect();
    SparseMat::from_rows(rows)
}

/// Min-norm nonnegative solution of c·w = 0, sum(w) = target, by the same
/// alternating projections as the global program (two constraints, one row).
fn solve_reflected_row(c: &[f64], target: f64, tol: f64, max_iter: usize) -> Option<Vec<f64>> {
    let k = c.len();
    let (mut cc, mut sc) = (0.0, 0.0);
    for &ci in c {
        cc += ci * ci;
        sc += ci;
    }
    let m = [cc, sc, sc, k as f64];
    let det = m[0] * m[3] - m[1] * m[2];
    if det.abs() < 1e-14 * (cc.max(k as f64)).powi(2).max(1e-300) {
        return None;
    }
    let inv = [m[3] / det, -m[1] / det, -m[2] / det, m[0] / det];
    let mut z = vec![0.0; k];
    let mut corr = vec![0.0; k];
    for _ in 0..max_iter {
        let mut y = z.clone();
        let mut r0 = 0.0;
        let mut r1 = -target;
        for i in 0..k {
            r0 += y[i] * c[i];
            r1 += y[i];
        }
        let a0 = inv[0] * r0 + inv[1] * r1;
        let a1 = inv[2] * r0 + inv[3] * r1;
        for i in 0..k {
            y[i] -= a0 * c[i] + a1;
        }
        let mut change = 0.0f64;
        for i in 0..k {
            let zin = y[i] + corr[i];
            let nz = zin.max(0.0);
            corr[i] = zin - nz;
            change = change.max((nz - z[i]).abs());
            z[i] = nz;
        }
        if change < tol {
            let mut r0 = 0.0;
            let mut r1 = -target;
            for i in 0..k {
                r0 += z[i] * c[i];
                r1 += z[i];
            }
            if r0.abs().max(r1.abs()) <= tol * 10.0 {
                return Some(z);
            }
        }
    }
    None
}

/// Neumann-variant weights: boundary rows are re-solved on the neighborhood
/// doubled by reflection across the local equator line (estimated from the
/// gradient of the Dirichlet z-eigenvector, rotated by pi/2), with tied ghost
/// weights folded back onto the originals; everything is then symmetrized at
/// the weight level so the constant vector stays exactly in the kernel of
/// D - W.
pub fn neumann_weights(
    plain: &SparseMat,
    charts: &[TangentChart],
    boundary: &[usize],
    z_values: &[f64],
    row_sums: &[f64],
) -> Result<SparseMat> {
    let n = charts.len();
    if z_values.len() != n {
        return Err(Error::IndexMismatch(format!(
            "z eigenvector has {} entries for {} nodes",
            z_values.len(),
            n
        )));
    }
    let mut is_boundary = vec![false; n];
    for &b in boundary {
        is_boundary[b] = true;
    }

    let folded: Vec<Option<Vec<(usize, f64)>>> = (0..n)
        .into_par_iter()
        .map(|p| {
            if !is_boundary[p] {
                return None;
            }
            let chart = &charts[p];
            let deltas = chart.displacements();
            // gradient of the z eigenvector over the chart, by linear fit
            // (center included at displacement zero)
            let mut m = [0.0f64; 9];
            let mut rhs = [0.0f64; 3];
            let mut add = |u: f64, v: f64, z: f64| {
                m[0] += u * u;
                m[1] += u * v;
                m[2] += u;
                m[4] += v * v;
                m[5] += v;
                m[8] += 1.0;
                rhs[0] += u * z;
                rhs[1] += v * z;
                rhs[2] += z;
            };
            add(0.0, 0.0, z_values[p]);
            for (i, &q) in chart.neighbors.iter().enumerate() {
                add(deltas[i].0, deltas[i].1, z_values[q]);
            }
            m[3] = m[1];
            m[6] = m[2];
            m[7] = m[5];
            let grad = invert3(&m).map(|inv| {
                (
                    inv[0] * rhs[0] + inv[1] * rhs[1] + inv[2] * rhs[2],
                    inv[3] * rhs[0] + inv[4] * rhs[1] + inv[5] * rhs[2],
                )
            });
            let zscale = chart
                .neighbors
                .iter()
                .map(|&q| z_values[q].abs())
                .fold(z_values[p].abs(), f64::max)
                .max(1e-300);
            let (gu, gv) = match grad {
                Some((gu, gv)) if (gu * gu + gv * gv).sqrt() > 1e-9 * zscale / chart.radius.max(1e-300) => {
                    (gu, gv)
                }
                _ => {
                    // No usable gradient; fall back to the inward mean
                    // direction of the neighborhood.
                    let mu = deltas.iter().map(|d| d.0).sum::<f64>();
                    let mv = deltas.iter().map(|d| d.1).sum::<f64>();
                    if (mu * mu + mv * mv).sqrt() < 1e-300 {
                        return Some(plain.row(p).collect());
                    }
                    (mu, mv)
                }
            };
            let gn = (gu * gu + gv * gv).sqrt();
            // equator line direction: gradient rotated by pi/2
            let t = (-gv / gn, gu / gn);
            // tied reflection: delta + delta^R = 2 (delta . t) t, so only the
            // along-line component constrains the doubled row
            let c: Vec<f64> = deltas.iter().map(|&(u, v)| u * t.0 + v * t.1).collect();
            match solve_reflected_row(&c, row_sums[p] / 2.0, 1e-12, 20_000) {
                Some(w) => Some(
                    chart
                        .neighbors
                        .iter()
                        .zip(&w)
                        .map(|(&q, &wi)| (q, 2.0 * wi))
                        .collect(),
                ),
                // reflected row infeasible; keep the plain row
                None => Some(plain.row(p).collect()),
            }
        })
        .collect();

    // symmetrize at the weight level: each directed entry contributes half to
    // both sides
    let mut sym_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for p in 0..n {
        let entries: Vec<(usize, f64)> = match &folded[p] {
            Some(row) => row.clone(),
            None => plain.row(p).collect(),
        };
        for (q, w) in entries {
            sym_rows[p].push((q, 0.5 * w));
            sym_rows[q].push((p, 0.5 * w));
        }
    }
    let merged: Vec<Vec<(usize, f64)>> = sym_rows
        .into_iter()
        .map(|mut row| {
            row.sort_unstable_by_key(|&(q, _)| q);
            let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (q, w) in row {
                match out.last_mut() {
                    Some((lq, lw)) if *lq == q => *lw += w,
                    _ => out.push((q, w)),
                }
            }
            out
        })
        .collect();
    Ok(SparseMat::from_rows(merged))
}

/// The three operators plus bookkeeping.
#[derive(Clone, Debug)]
pub struct LaplacianSet {
    pub weights: SparseMat,
    pub laplacian: SparseMat,
    /// Interior principal block of L (the Dirichlet operator for eigenpairs).
    pub dirichlet: SparseMat,
    /// Node ids of the Dirichlet block's rows.
    pub interior: Vec<usize>,
    /// Neumann operator over all nodes.
    pub neumann: SparseMat,
    pub boundary: Vec<usize>,
}

pub fn assemble(w_plain: &SparseMat, w_neumann: &SparseMat, boundary: &[usize]) -> LaplacianSet {
    let n = w_plain.dim();
    let mut is_boundary = vec![false; n];
    for &b in boundary {
        is_boundary[b] = true;
    }
    let interior: Vec<usize> = (0..n).filter(|&p| !is_boundary[p]).collect();
    let laplacian = laplacian_from_weights(w_plain);
    let dirichlet = laplacian.principal_submatrix(&interior);
    let neumann = laplacian_from_weights(w_neumann);
    LaplacianSet {
        weights: w_plain.clone(),
        laplacian,
        dirichlet,
        interior,
        neumann,
        boundary: boundary.to_vec(),
    }
}

/// Writes L (and friends) in Matrix Market form; the Dirichlet dump uses the
/// full-size identity-row formulation with the given diagonal value t.
pub fn write_dirichlet_matrix_market<W: std::io::Write>(
    laplacian: &SparseMat,
    boundary: &[usize],
    t: f64,
    mut w: W,
) -> std::io::Result<()> {
    let n = laplacian.dim();
    let mut is_boundary = vec![false; n];
    for &b in boundary {
        is_boundary[b] = true;
    }
    let mut nnz = 0usize;
    for i in 0..n {
        nnz += if is_boundary[i] {
            1
        } else {
            laplacian.row(i).count()
        };
    }
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{n} {n} {nnz}")?;
    for i in 0..n {
        if is_boundary[i] {
            writeln!(w, "{} {} {:.17e}", i + 1, i + 1, t)?;
        } else {
            for (j, v) in laplacian.row(i) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pixelgraph::{build_neighborhoods, build_vectors};
    use crate::render::ImageStack;
    use crate::rng::Rng;
    use crate::spectral::{smallest_eigenpairs, EigenOptions};

    const SQ32: f64 = 0.8660254037844386; // sqrt(3)/2

    /// Periodic triangular lattice: every node has the six unit-ring
    /// neighbors, displacements are consistent between paired rows, and
    /// every row is feasible. Jitter moves the nodes without touching the
    /// topology.
    fn torus_lattice(jitter: f64, seed: u64) -> Vec<TangentChart> {
        let (w, h) = (8usize, 8usize);
        let mut rng = Rng::new(seed);
        let jit: Vec<(f64, f64)> = (0..w * h)
            .map(|_| (jitter * (rng.next_f64() - 0.5), jitter * (rng.next_f64() - 0.5)))
            .collect();
        let offs: [(i32, i32, f64, f64); 6] = [
            (1, 0, 1.0, 0.0),
            (-1, 0, -1.0, 0.0),
            (0, 1, 0.5, SQ32),
            (0, -1, -0.5, -SQ32),
            (1, -1, 0.5, -SQ32),
            (-1, 1, -0.5, SQ32),
        ];
        (0..w * h)
            .map(|n| {
                let i = (n % w) as i32;
                let j = (n / w) as i32;
                let mut neighbors = Vec::with_capacity(6);
                let mut uv = Vec::with_capacity(6);
                for &(di, dj, du, dv) in &offs {
                    let qi = (i + di).rem_euclid(w as i32) as usize;
                    let qj = (j + dj).rem_euclid(h as i32) as usize;
                    let q = qj * w + qi;
                    neighbors.push(q);
                    uv.push((du + jit[q].0 - jit[n].0, dv + jit[q].1 - jit[n].1));
                }
                let radius = uv.iter().map(|&(u, v)| (u * u + v * v).sqrt()).fold(0.0, f64::max);
                TangentChart { neighbors, center_uv: (0.0, 0.0), uv, radius, degenerate: false }
            })
            .collect()
    }

    #[test]
    fn hexagon_rows_get_equal_weights() {
        let charts = torus_lattice(0.0, 0);
        let sol = solve_weights(&charts, &[], &WeightOptions::default()).unwrap();
        // row sum 1 and six-fold symmetry force the min-norm solution to
        // equal weights 1/6 on the unit ring
        let row: Vec<(usize, f64)> = sol.weights.row(0).collect();
        assert_eq!(row.len(), 6);
        for &(_, w) in &row {
            assert!((w - 1.0 / 6.0).abs() < 1e-7, "w = {w}");
        }
        assert!(sol.diagnostics.max_equality_residual <= 1e-8);
    }

    /// Random cap sampling goes through the real flow: the outermost band is
    /// declared boundary (exempt from the program), remaining one-sided
    /// interior rows are demoted, and the interior program solves.
    #[test]
    fn prepare_charts_demotes_only_stray_interior_rows() {
        let mut rng = Rng::new(13);
        let n = 400;
        let radii: Vec<f64> = (0..n).map(|_| 0.9 * rng.next_f64().sqrt()).collect();
        let rows: Vec<Vec<f64>> = radii
            .iter()
            .map(|&r| {
                let phi = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
                vec![r * phi.cos(), r * phi.sin(), (1.0 - r * r).sqrt()]
            })
            .collect();
        let stack = ImageStack {
            width: n,
            height: 1,
            mask: vec![true; n],
            images: (0..3).map(|k| (0..n).map(|p| rows[p][k]).collect()).collect(),
            lights: None,
        };
        let v = build_vectors(&stack, 1e-9).unwrap();
        let g = build_neighborhoods(&v, 24).unwrap();
        // boundary: the 10% of nodes with the smallest z
        let mut by_z: Vec<usize> = (0..g.node_count()).collect();
        by_z.sort_by(|&a, &b| g.vectors[a][2].partial_cmp(&g.vectors[b][2]).unwrap());
        let boundary: Vec<usize> = by_z[..n / 10].to_vec();
        let (g2, charts, boundary2) = prepare_charts(g, &boundary).unwrap();
        assert!(g2.node_count() > 9 * n / 10, "over-demoted: {} left", g2.node_count());
        assert_eq!(boundary2.len(), n / 10, "boundary rows must survive");
        let sol = solve_weights(&charts, &boundary2, &WeightOptions::default()).unwrap();
        assert!(sol.diagnostics.max_equality_residual <= 1e-8);
        assert_eq!(sol.weights.asymmetry(), 0.0);
    }

    #[test]
    fn constraints_hold_on_a_jittered_patch() {
        let charts = torus_lattice(0.15, 21);
        let sol = solve_weights(&charts, &[], &WeightOptions::default()).unwrap();
        let d = &sol.diagnostics;
        assert!(d.max_equality_residual <= 1e-8, "{d:?}");
        assert_eq!(d.max_asymmetry, 0.0);
        assert!(d.min_weight >= 0.0);
        assert!(sol.weights.asymmetry() == 0.0);
        // linear precision spelled out: each row applied to f(u,v) = u or v
        // over its own chart vanishes
        for (p, chart) in charts.iter().enumerate() {
            let deltas = chart.displacements();
            let mut au = 0.0;
            let mut av = 0.0;
            for (i, &q) in chart.neighbors.iter().enumerate() {
                au += sol.weights.get(p, q) * deltas[i].0;
                av += sol.weights.get(p, q) * deltas[i].1;
            }
            assert!(au.abs() <= 1e-8 && av.abs() <= 1e-8, "row {p}: ({au}, {av})");
        }
    }

    #[test]
    fn laplacian_is_psd_with_zero_row_sums() {
        let charts = torus_lattice(0.1, 7);
        let sol = solve_weights(&charts, &[], &WeightOptions::default()).unwrap();
        let l = laplacian_from_weights(&sol.weights);
        for s in l.row_sums() {
            assert!(s.abs() < 1e-12, "row sum {s}");
        }
        let eig = smallest_eigenpairs(&l, 1, &EigenOptions::default()).unwrap();
        assert!(eig.values[0] >= -1e-9, "lambda_min = {}", eig.values[0]);
    }

    #[test]
    fn quadratic_action_matches_stencil_scale() {
        let charts = torus_lattice(0.12, 33);
        let sol = solve_weights(&charts, &[], &WeightOptions::default()).unwrap();
        let p = 27usize;
        let chart = &charts[p];
        // f = u² + v² in the chart frame anchored at an arbitrary origin:
        // f(q) - f(p) = 2 x_p . delta + |delta|², and the linear part is
        // killed by the equality constraints
        let x_p = (0.3, 0.7);
        let mut acc = 0.0;
        let mut wr2 = 0.0;
        let mut s = 0.0;
        for (i, &q) in chart.neighbors.iter().enumerate() {
            let w = sol.weights.get(p, q);
            let (du, dv) = chart.uv[i];
            let fq_minus_fp = 2.0 * (x_p.0 * du + x_p.1 * dv) + du * du + dv * dv;
            acc += w * fq_minus_fp;
            wr2 += w * (du * du + dv * dv);
            s += w;
        }
        let mean_r2 = wr2 / s;
        // the 5-point stencil Laplacian of u² + v² is exactly 4
        let estimate = 4.0 * acc / (s * mean_r2);
        assert!((estimate - 4.0).abs() / 4.0 < 0.10, "estimate {estimate}");
        // the assembled operator carries the opposite sign (L = D - W), so
        // its action on a locally convex quadratic is negative
        assert!(acc > 0.0 && s > 0.0);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let charts = torus_lattice(0.1, 5);
        let opts = WeightOptions { max_iter: 1, tol: 1e-14, ..Default::default() };
        match solve_weights(&charts, &[], &opts) {
            Err(Error::NoConvergence(msg)) => assert!(msg.contains("residual")),
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn inverse_radius_mode_changes_row_sums() {
        let charts = torus_lattice(0.1, 11);
        let opts =
            WeightOptions { row_sum_mode: RowSumMode::InverseRadiusSq, ..Default::default() };
        let sol = solve_weights(&charts, &[], &opts).unwrap();
        for (p, chart) in charts.iter().enumerate() {
            let s: f64 = sol.weights.row(p).map(|(_, w)| w).sum();
            assert!((s - 1.0 / chart.radius.powi(2)).abs() < 1e-6, "row {p}: {s}");
        }
    }

    #[test]
    fn neumann_folding_keeps_constant_in_kernel() {
        let charts = torus_lattice(0.05, 3);
        // an arbitrary band of nodes plays the boundary
        let boundary: Vec<usize> = (0..charts.len()).filter(|&p| p % 8 == 0).collect();
        let sol = solve_weights(&charts, &boundary, &WeightOptions::default()).unwrap();
        // synthetic "z eigenvector", zero on the boundary nodes
        let z: Vec<f64> = (0..charts.len())
            .map(|p| if p % 8 == 0 { 0.0 } else { ((p % 8) as f64 * 0.7).sin().abs() + 0.1 })
            .collect();
        let wn = neumann_weights(&sol.weights, &charts, &boundary, &z, &sol.row_sums).unwrap();
        assert!(wn.asymmetry() < 1e-12);
        let ln = laplacian_from_weights(&wn);
        for s in ln.row_sums() {
            assert!(s.abs() < 1e-12, "L_N row sum {s}");
        }
        let eig = smallest_eigenpairs(&ln, 2, &EigenOptions::default()).unwrap();
        // constant vector: lambda_0 ~ 0 well under the lambda_1 scale
        assert!(eig.values[0].abs() <= 1e-6 * eig.values[1].abs().max(1e-300));
    }

    #[test]
    fn assemble_splits_interior_block() {
        let charts = torus_lattice(0.05, 3);
        let boundary: Vec<usize> = (0..charts.len()).filter(|&p| p % 8 == 0).collect();
        let sol = solve_weights(&charts, &boundary, &WeightOptions::default()).unwrap();
        let z = vec![1.0; charts.len()];
        let wn = neumann_weights(&sol.weights, &charts, &boundary, &z, &sol.row_sums).unwrap();
        let set = assemble(&sol.weights, &wn, &boundary);
        assert_eq!(set.interior.len() + boundary.len(), charts.len());
        assert_eq!(set.dirichlet.dim(), set.interior.len());
        assert_eq!(set.neumann.dim(), charts.len());
        // Dirichlet block = interior rows/columns of L
        for (bi, &p) in set.interior.iter().enumerate() {
            for (bj, &q) in set.interior.iter().enumerate() {
                assert_eq!(set.dirichlet.get(bi, bj), set.laplacian.get(p, q));
            }
        }
    }
}
