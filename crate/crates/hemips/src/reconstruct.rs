//! From eigenvectors to normals and depth.
//!
//! The Dirichlet z-eigenvector and the Neumann x/y pair determine the normal
//! field up to per-component scales, an in-plane rotation/reflection of the
//! x/y pair, and the convex-concave branch. The scales come from a least
//! squares fit that makes per-pixel norms one (the z component is mapped
//! affinely so its minimum lands on the visibility floor), the rotation from
//! minimizing the integrability residual over the image grid, and the branch
//! from a global depth assumption (object center nearer the camera than its
//! rim).
//!
//! Image axes: x grows with the column index, y points up (against the row
//! index). A normal (nx, ny, nz) corresponds to depth gradients
//! dz/dx = -nx/nz and dz/dy = -ny/nz, which is what both the integrability
//! residual and the depth integration use.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct NormalField {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    /// Unit normals with z >= z_floor wherever the mask is set.
    pub normals: Vec<[f64; 3]>,
    /// Pixels filled by neighbor interpolation rather than the embedding.
    pub interpolated: Vec<bool>,
    pub z_floor: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct RotationInfo {
    pub angle_rad: f64,
    pub reflected: bool,
    pub residual_before: f64,
    pub residual_after: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convexity {
    Convex,
    Concave,
    Auto,
}

#[derive(Clone, Debug)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    pub z: Vec<f64>,
    /// Chosen branch: true when the mask centroid region ended nearer the
    /// camera than the boundary ring.
    pub convex: bool,
    /// Whether the integrated depth (and hence the implied x/y normal
    /// components) was negated to honor the requested convexity.
    pub negated: bool,
    pub cg_residual: f64,
    pub cg_iterations: usize,
}

/// Assembles a normal field from the three eigenvectors.
///
/// `dirichlet_z` lives on `interior` (node ids); the x/y pair lives on all
/// nodes. Component scales (a, a, c) and the affine z-shift landing the
/// minimum on `z_floor` are fitted so per-pixel norms are as close to one as
/// possible; pixels of the grid not covered by any node are filled by
/// normalized averaging of their image neighbors.
#[allow(clippy::too_many_arguments)]
pub fn assemble_normals(
    width: usize,
    height: usize,
    mask: &[bool],
    node_pixels: &[usize],
    interior: &[usize],
    dirichlet_z: &[f64],
    neumann_x: &[f64],
    neumann_y: &[f64],
    z_floor: f64,
) -> Result<NormalField> {
    let n = node_pixels.len();
    if neumann_x.len() != n || neumann_y.len() != n {
        return Err(Error::IndexMismatch(format!(
            "x/y eigenvectors have {} / {} entries for {} nodes",
            neumann_x.len(),
            neumann_y.len(),
            n
        )));
    }
    if dirichlet_z.len() != interior.len() {
        return Err(Error::IndexMismatch(format!(
            "z eigenvector has {} entries for {} interior nodes",
            dirichlet_z.len(),
            interior.len()
        )));
    }

    // z over all nodes, zero on the boundary, sign fixed to positive mean
    let mut z = vec![0.0; n];
    for (i, &node) in interior.iter().enumerate() {
        z[node] = dirichlet_z[i];
    }
    let mean_z: f64 = z.iter().sum::<f64>() / n as f64;
    if mean_z < 0.0 {
        for v in z.iter_mut() {
            *v = -*v;
        }
    }
    let spread = {
        let m = z.iter().sum::<f64>() / n as f64;
        (z.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt()
    };
    let zmax = z.iter().copied().fold(0.0f64, |a, b| a.max(b.abs()));
    if spread <= 1e-9 * zmax.max(1e-300) || zmax == 0.0 {
        return Err(Error::Degenerate(
            "z eigenvector is constant: no equator structure to anchor the field".into(),
        ));
    }
    // interior values should be nonnegative up to solver noise; the ground
    // state can dip slightly below zero near the boundary
    let zmin = z.iter().copied().fold(f64::INFINITY, f64::min);
    let z: Vec<f64> = z.iter().map(|v| v - zmin.min(0.0)).collect();

    let norm = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>()).sqrt();
    let nx = norm(neumann_x).max(1e-300);
    let ny = norm(neumann_y).max(1e-300);
    let nz = norm(&z).max(1e-300);
    let xs: Vec<f64> = neumann_x.iter().map(|v| v / nx).collect();
    let ys: Vec<f64> = neumann_y.iter().map(|v| v / ny).collect();
    let zs: Vec<f64> = z.iter().map(|v| v / nz).collect();

    // fit (a, c) >= 0 so a²(x²+y²) + (c z + f)² ~ 1 per node
    let f = z_floor;
    let rho2: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x * x + y * y).collect();
    // linear initialization ignoring the shift's cross term
    let (mut a2, mut c2) = {
        let mut m = [0.0f64; 4];
        let mut rhs = [0.0f64; 2];
        for (r, zv) in rho2.iter().zip(&zs) {
            let t = 1.0 - f * f;
            m[0] += r * r;
            m[1] += r * zv * zv;
            m[2] += r * zv * zv;
            m[3] += zv * zv * zv * zv;
            rhs[0] += r * t;
            rhs[1] += zv * zv * t;
        }
        let det = m[0] * m[3] - m[1] * m[2];
        if det.abs() > 1e-30 {
            (
                ((m[3] * rhs[0] - m[1] * rhs[1]) / det).max(1e-12),
                ((m[0] * rhs[1] - m[2] * rhs[0]) / det).max(1e-12),
            )
        } else {
            (1.0, 1.0)
        }
    };
    let mut a = a2.sqrt();
    let mut c = c2.sqrt();
    for _ in 0..12 {
        // Gauss-Newton on r_p = a² rho2 + (c z + f)² - 1
        let mut jtj = [0.0f64; 4];
        let mut jtr = [0.0f64; 2];
        for (r, zv) in rho2.iter().zip(&zs) {
            let res = a * a * r + (c * zv + f).powi(2) - 1.0;
            let ja = 2.0 * a * r;
            let jc = 2.0 * (c * zv + f) * zv;
            jtj[0] += ja * ja;
            jtj[1] += ja * jc;
            jtj[2] += ja * jc;
            jtj[3] += jc * jc;
            jtr[0] += ja * res;
            jtr[1] += jc * res;
        }
        let det = jtj[0] * jtj[3] - jtj[1] * jtj[2];
        if det.abs() < 1e-30 {
            break;
        }
        let da = (jtj[3] * jtr[0] - jtj[1] * jtr[1]) / det;
        let dc = (jtj[0] * jtr[1] - jtj[2] * jtr[0]) / det;
        a = (a - da).max(1e-9);
        c = (c - dc).max(1e-9);
        if da.abs().max(dc.abs()) < 1e-12 {
            break;
        }
    }
    a2 = a;
    c2 = c;

    let npx = width * height;
    let mut normals = vec![[0.0, 0.0, 1.0]; npx];
    let mut covered = vec![false; npx];
    for (node, &px) in node_pixels.iter().enumerate() {
        let x = a2 * xs[node];
        let y = a2 * ys[node];
        let zv = (c2 * zs[node] + f).max(f);
        let len = (x * x + y * y + zv * zv).sqrt().max(1e-300);
        let mut nrm = [x / len, y / len, zv / len];
        if nrm[2] < f {
            // clamp to the visibility floor; rescale the tangential part
            let t = (nrm[0] * nrm[0] + nrm[1] * nrm[1]).sqrt();
            if t > 1e-12 {
                let s = (1.0 - f * f).sqrt() / t;
                nrm = [nrm[0] * s, nrm[1] * s, f];
            } else {
                nrm = [(1.0 - f * f).sqrt(), 0.0, f];
            }
        }
        normals[px] = nrm;
        covered[px] = true;
    }

    // fill holes (dark, outlier, demoted pixels) from image neighbors
    let mut interpolated = vec![false; npx];
    loop {
        let mut progressed = false;
        let snapshot = covered.clone();
        let current = normals.clone();
        for r in 0..height {
            for col in 0..width {
                let i = r * width + col;
                if !mask[i] || snapshot[i] {
                    continue;
                }
                let mut acc = [0.0f64; 3];
                let mut cnt = 0;
                let mut push = |j: usize| {
                    if snapshot[j] {
                        acc[0] += current[j][0];
                        acc[1] += current[j][1];
                        acc[2] += current[j][2];
                        cnt += 1;
                    }
                };
                if col > 0 {
                    push(i - 1);
                }
                if col + 1 < width {
                    push(i + 1);
                }
                if r > 0 {
                    push(i - width);
                }
                if r + 1 < height {
                    push(i + width);
                }
                if cnt == 0 {
                    continue;
                }
                let len = (acc[0] * acc[0] + acc[1] * acc[1] + acc[2] * acc[2]).sqrt();
                let mut nrm = if len > 1e-12 {
                    [acc[0] / len, acc[1] / len, acc[2] / len]
                } else {
                    [0.0, 0.0, 1.0]
                };
                if nrm[2] < f {
                    let t = (nrm[0] * nrm[0] + nrm[1] * nrm[1]).sqrt().max(1e-300);
                    let s = (1.0 - f * f).sqrt() / t;
                    nrm = [nrm[0] * s, nrm[1] * s, f];
                }
                normals[i] = nrm;
                covered[i] = true;
                interpolated[i] = true;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    // anything still uncovered inside the mask gets the default up-normal
    for i in 0..npx {
        if mask[i] && !covered[i] {
            interpolated[i] = true;
        }
    }

    Ok(NormalField {
        width,
        height,
        mask: mask.to_vec(),
        normals,
        interpolated,
        z_floor: f,
    })
}

/// Integrability residual: sum over interior mask pixels of
/// (d p / d y - d q / d x)² with p = -nx/nz, q = -ny/nz, central differences.
pub fn integrability_residual(field: &NormalField) -> f64 {
    let (w, h) = (field.width, field.height);
    let grad = |i: usize| {
        let n = field.normals[i];
        (-n[0] / n[2], -n[1] / n[2])
    };
    let mut acc = 0.0;
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let i = r * w + c;
            if !(field.mask[i]
                && field.mask[i - 1]
                && field.mask[i + 1]
                && field.mask[i - w]
                && field.mask[i + w])
            {
                continue;
            }
            // y points up: d/dy f = (f[r-1] - f[r+1]) / 2
            let dp_dy = (grad(i - w).0 - grad(i + w).0) / 2.0;
            let dq_dx = (grad(i + 1).1 - grad(i - 1).1) / 2.0;
            acc += (dp_dy - dq_dx) * (dp_dy - dq_dx);
        }
    }
    acc
}

fn rotated_field(field: &NormalField, angle: f64, reflected: bool) -> NormalField {
    let (s, c) = angle.sin_cos();
    let mut out = field.clone();
    for (i, n) in field.normals.iter().enumerate() {
        if !field.mask[i] {
            continue;
        }
        let y = if reflected { -n[1] } else { n[1] };
        out.normals[i] = [c * n[0] - s * y, s * n[0] + c * y, n[2]];
    }
    out
}

/// Resolves the in-plane rotation and reflection of the x/y pair by
/// minimizing the integrability residual: a 1-degree grid search over both
/// reflection branches, then golden-section refinement to 0.01 degrees.
pub fn resolve_rotation(field: &NormalField) -> (NormalField, RotationInfo) {
    let residual_before = integrability_residual(field);
    let eval = |angle: f64, reflected: bool| -> f64 {
        integrability_residual(&rotated_field(field, angle, reflected))
    };
    let candidates: Vec<(f64, bool)> = (0..360)
        .flat_map(|d| {
            let a = (d as f64).to_radians();
            [(a, false), (a, true)]
        })
        .collect();
    let scored: Vec<f64> = candidates.par_iter().map(|&(a, r)| eval(a, r)).collect();
    let best = (0..candidates.len())
        .min_by(|&i, &j| scored[i].partial_cmp(&scored[j]).unwrap())
        .unwrap();
    let (grid_angle, reflected) = candidates[best];

    // golden-section refine within +-1 degree
    let golden = 0.618_033_988_749_895_f64;
    let mut lo = grid_angle - 1f64.to_radians();
    let mut hi = grid_angle + 1f64.to_radians();
    let mut m1 = hi - golden * (hi - lo);
    let mut m2 = lo + golden * (hi - lo);
    let mut f1 = eval(m1, reflected);
    let mut f2 = eval(m2, reflected);
    while hi - lo > 0.01f64.to_radians() {
        if f1 <= f2 {
            hi = m2;
            m2 = m1;
            f2 = f1;
            m1 = hi - golden * (hi - lo);
            f1 = eval(m1, reflected);
        } else {
            lo = m1;
            m1 = m2;
            f1 = f2;
            m2 = lo + golden * (hi - lo);
            f2 = eval(m2, reflected);
        }
    }
    let mut angle = 0.5 * (lo + hi);
    let mut best_res = eval(angle, reflected);
    // keep the grid optimum if refinement did not help
    if scored[best] < best_res {
        angle = grid_angle;
        best_res = scored[best];
    }
    let angle = angle.rem_euclid(2.0 * std::f64::consts::PI);
    let out = rotated_field(field, angle, reflected);
    (
        out,
        RotationInfo {
            angle_rad: angle,
            reflected,
            residual_before,
            residual_after: best_res,
        },
    )
}

/// Negates the in-plane components (the other integrable branch; equivalent
/// to flipping the sign of depth).
pub fn negate_tangential(field: &NormalField) -> NormalField {
    let mut out = field.clone();
    for (i, n) in field.normals.iter().enumerate() {
        if field.mask[i] {
            out.normals[i] = [-n[0], -n[1], n[2]];
        }
    }
    out
}

/// Least-squares depth from the normal field's gradients on the irregular
/// mask (a masked Poisson problem solved by conjugate gradients), plus the
/// convex/concave branch decision.
pub fn integrate_depth(field: &NormalField, convexity: Convexity) -> Result<DepthMap> {
    let (w, h) = (field.width, field.height);
    let npx = w * h;
    let idx: Vec<usize> = (0..npx).filter(|&i| field.mask[i]).collect();
    if idx.is_empty() {
        return Err(Error::EmptyGraph("depth integration needs masked pixels".into()));
    }
    let mut local = vec![usize::MAX; npx];
    for (li, &i) in idx.iter().enumerate() {
        local[i] = li;
    }
    let n = idx.len();
    let grad = |i: usize| {
        let nrm = field.normals[i];
        (-nrm[0] / nrm[2], -nrm[1] / nrm[2])
    };

    // edges with trapezoid gradient targets
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !field.mask[i] {
                continue;
            }
            if c + 1 < w && field.mask[i + 1] {
                edges.push((local[i], local[i + 1], (grad(i).0 + grad(i + 1).0) / 2.0));
            }
            if r > 0 && field.mask[i - w] {
                // z[r-1] - z[r] ~ (q[r] + q[r-1]) / 2 since y points up
                edges.push((local[i], local[i - w], (grad(i).1 + grad(i - w).1) / 2.0));
            }
        }
    }

    // normal equations: graph Laplacian system
    let mut diag = vec![0.0f64; n];
    let mut rhs = vec![0.0f64; n];
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(u, v, t) in &edges {
        diag[u] += 1.0;
        diag[v] += 1.0;
        adj[u].push((v, -1.0));
        adj[v].push((u, -1.0));
        rhs[u] -= t;
        rhs[v] += t;
    }
    let apply = |x: &[f64], y: &mut [f64]| {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut acc = diag[i] * x[i];
            for &(j, w) in &adj[i] {
                acc += w * x[j];
            }
            *yi = acc;
        });
    };

    // conjugate gradients from zero
    let mut z = vec![0.0f64; n];
    let mut r = rhs.clone();
    let mut p = r.clone();
    let rhs_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let tol = 1e-10;
    let max_iter = 20_000.min(4 * n + 100);
    let mut iterations = 0;
    let mut ap = vec![0.0f64; n];
    while rs.sqrt() / rhs_norm > tol && iterations < max_iter {
        iterations += 1;
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rs / pap;
        for i in 0..n {
            z[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    let cg_residual = rs.sqrt() / rhs_norm;
    if cg_residual > 1e-6 {
        return Err(Error::NoConvergence(format!(
            "depth integration: CG residual {cg_residual:.3e} after {iterations} iterations"
        )));
    }

    // convex/concave branch: compare the centroid region against the rim
    let (mut cr, mut cc, mut cnt) = (0.0, 0.0, 0.0);
    for &i in &idx {
        cr += (i / w) as f64;
        cc += (i % w) as f64;
        cnt += 1.0;
    }
    cr /= cnt;
    cc /= cnt;
    let rmax = idx
        .iter()
        .map(|&i| {
            let dr = (i / w) as f64 - cr;
            let dc = (i % w) as f64 - cc;
            (dr * dr + dc * dc).sqrt()
        })
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mut center_sum = 0.0f64;
    let mut center_n = 0.0f64;
    let mut ring_sum = 0.0f64;
    let mut ring_n = 0.0f64;
    for (li, &i) in idx.iter().enumerate() {
        let r0 = i / w;
        let c0 = i % w;
        let dr = r0 as f64 - cr;
        let dc = c0 as f64 - cc;
        let dist = (dr * dr + dc * dc).sqrt();
        if dist <= 0.25 * rmax {
            center_sum += z[li];
            center_n += 1.0;
        }
        let on_ring = r0 == 0
            || r0 + 1 == h
            || c0 == 0
            || c0 + 1 == w
            || !field.mask[i - 1]
            || !field.mask[i + 1]
            || !field.mask[i - w]
            || !field.mask[i + w];
        if on_ring {
            ring_sum += z[li];
            ring_n += 1.0;
        }
    }
    let center_mean = center_sum / center_n.max(1.0);
    let ring_mean = ring_sum / ring_n.max(1.0);
    let center_nearer = center_mean > ring_mean;
    let negate = match convexity {
        Convexity::Auto | Convexity::Convex => !center_nearer,
        Convexity::Concave => center_nearer,
    };
    if negate {
        for v in z.iter_mut() {
            *v = -*v;
        }
    }

    let mut full = vec![0.0f64; npx];
    for (li, &i) in idx.iter().enumerate() {
        full[i] = z[li];
    }
    Ok(DepthMap {
        width: w,
        height: h,
        mask: field.mask.clone(),
        z: full,
        convex: center_nearer != negate,
        negated: negate,
        cg_residual,
        cg_iterations: iterations,
    })
}
