//! Real spherical harmonics, isotropic reflectance kernels, and the shading
//! model they induce.
//!
//! Conventions. Harmonics are the real orthonormal basis on S²: zonal terms
//! are `Y_n0`, and for m >= 1 the even/odd pair carries the sqrt(2) factor so
//! that every basis function has unit L² norm. Associated Legendre functions
//! are taken without the Condon-Shortley sign. The flat index orders by n,
//! then within an order `m = 0`, then each even harmonic before its odd
//! partner: `Y_00, Y_10, Y^e_11, Y^o_11, Y_20, ...` (zero-based here).
//!
//! An isotropic kernel k(theta) expands in zonal harmonics with coefficients
//! `k_(n)`; convolving a lighting function against it scales each harmonic
//! order by the constant `alpha_(n) = sqrt(4 pi / (2n+1)) * k_(n)`. For the
//! clamped-cosine (Lambertian) kernel these are pi, 2 pi / 3, pi / 4 for the
//! first three orders, and the shading of a normal n under lighting with
//! coefficients l_s is `rho * sum_s alpha_(n(s)) l_s Y_s(n)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Hard cap on harmonic order for kernels and lighting. Order 2 suffices for
/// the clamped-cosine analysis; the headroom is for kernel experiments.
pub const MAX_ORDER: usize = 8;

/// Unit vector on S².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Direction {
    /// Normalizes the given components; errors on a (near-)zero vector.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::InvalidInput(format!(
                "cannot normalize direction ({x}, {y}, {z})"
            )));
        }
        Ok(Direction { x: x / n, y: y / n, z: z / n })
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Geodesic (angular) distance to another unit vector, in radians.
    pub fn angle_to(&self, other: &Direction) -> f64 {
        self.dot(other).clamp(-1.0, 1.0).acos()
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.x * self.x + self.y * self.y + self.z * self.z - 1.0).abs() <= tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

/// Index (n, m, parity) of a real harmonic, with the flat single-subscript
/// ordering derived from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HarmonicIndex {
    n: usize,
    m: usize,
    parity: Parity,
}

impl HarmonicIndex {
    pub fn new(n: usize, m: usize, parity: Parity) -> Result<Self> {
        let odd = parity == Parity::Odd;
        if m > n || (odd && m == 0) {
            return Err(Error::InvalidHarmonicIndex { n, m, odd });
        }
        Ok(HarmonicIndex { n, m, parity })
    }

    pub fn zonal(n: usize) -> Self {
        HarmonicIndex { n, m: 0, parity: Parity::Even }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    /// Zero-based flat index: Y_00 -> 0, Y_10 -> 1, Y^e_11 -> 2, Y^o_11 -> 3,
    /// Y_20 -> 4, ...
    pub fn flat(&self) -> usize {
        let within = match (self.m, self.parity) {
            (0, _) => 0,
            (m, Parity::Even) => 2 * m - 1,
            (m, Parity::Odd) => 2 * m,
        };
        self.n * self.n + within
    }

    pub fn from_flat(s: usize) -> Self {
        let n = (s as f64).sqrt() as usize;
        let n = if (n + 1) * (n + 1) <= s { n + 1 } else { n };
        let within = s - n * n;
        if within == 0 {
            HarmonicIndex { n, m: 0, parity: Parity::Even }
        } else {
            let m = within.div_ceil(2);
            let parity = if within % 2 == 1 { Parity::Even } else { Parity::Odd };
            HarmonicIndex { n, m, parity }
        }
    }

    /// All indices with order <= `order`, in flat order.
    pub fn all_up_to(order: usize) -> Vec<HarmonicIndex> {
        (0..(order + 1) * (order + 1)).map(HarmonicIndex::from_flat).collect()
    }
}

/// Associated Legendre P_nm(z) without the Condon-Shortley sign, per the
/// Rodrigues form (1-z²)^{m/2} / (2^n n!) d^{n+m}/dz^{n+m} (z²-1)^n.
pub(crate) fn assoc_legendre(n: usize, m: usize, z: f64) -> f64 {
    debug_assert!(m <= n);
    let somx2 = (1.0 - z * z).max(0.0).sqrt();
    // P_mm = (2m-1)!! (1-z²)^{m/2}
    let mut pmm = 1.0;
    for k in 1..=m {
        pmm *= (2 * k - 1) as f64 * somx2;
    }
    if n == m {
        return pmm;
    }
    // P_{m+1,m} = (2m+1) z P_mm
    let mut pm1 = (2 * m + 1) as f64 * z * pmm;
    if n == m + 1 {
        return pm1;
    }
    let mut pm2 = pmm;
    let mut p = 0.0;
    for k in (m + 2)..=n {
        p = ((2 * k - 1) as f64 * z * pm1 - (k + m - 1) as f64 * pm2) / (k - m) as f64;
        pm2 = pm1;
        pm1 = p;
    }
    p
}

fn factorial_ratio(n: usize, m: usize) -> f64 {
    // (n-m)! / (n+m)!
    let mut r = 1.0;
    for k in (n - m + 1)..=(n + m) {
        r /= k as f64;
    }
    r
}

/// Evaluates the real orthonormal harmonic at a unit direction.
pub fn eval_real_sh(idx: HarmonicIndex, d: Direction) -> f64 {
    let n = idx.n;
    let m = idx.m;
    let norm = ((2 * n + 1) as f64 / (4.0 * PI) * factorial_ratio(n, m)).sqrt();
    let p = assoc_legendre(n, m, d.z);
    if m == 0 {
        return norm * p;
    }
    let phi = d.y.atan2(d.x);
    let azimuth = match idx.parity {
        Parity::Even => (m as f64 * phi).cos(),
        Parity::Odd => (m as f64 * phi).sin(),
    };
    std::f64::consts::SQRT_2 * norm * p * azimuth
}

/// All harmonic values up to `order` at one direction, flat-indexed.
pub fn sh_basis(order: usize, d: Direction) -> Vec<f64> {
    HarmonicIndex::all_up_to(order)
        .into_iter()
        .map(|idx| eval_real_sh(idx, d))
        .collect()
}

/// Coefficients of the Legendre polynomial P_n, ascending powers of z.
pub fn legendre_coeffs(n: usize) -> Vec<f64> {
    let mut p0 = vec![1.0];
    if n == 0 {
        return p0;
    }
    let mut p1 = vec![0.0, 1.0];
    for k in 2..=n {
        let kf = k as f64;
        let mut p2 = vec![0.0; k + 1];
        for (j, &c) in p1.iter().enumerate() {
            p2[j + 1] += (2.0 * kf - 1.0) / kf * c;
        }
        for (j, &c) in p0.iter().enumerate() {
            p2[j] -= (kf - 1.0) / kf * c;
        }
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Lighting as real harmonic coefficients up to some order, flat-indexed.
#[derive(Clone, Debug)]
pub struct LightingCoeffs {
    coeffs: Vec<f64>,
}

impl LightingCoeffs {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        let count = coeffs.len();
        let order = (count as f64).sqrt() as usize;
        if order * order != count || order == 0 || order - 1 > MAX_ORDER {
            return Err(Error::InvalidInput(format!(
                "lighting coefficient count {count} is not (order+1)^2 with order <= {MAX_ORDER}"
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite lighting coefficient".into()));
        }
        Ok(LightingCoeffs { coeffs })
    }

    /// Dirac directional light: l_s = Y_s(l).
    pub fn directional(l: Direction, order: usize) -> Self {
        LightingCoeffs { coeffs: sh_basis(order, l) }
    }

    pub fn zero(order: usize) -> Self {
        LightingCoeffs { coeffs: vec![0.0; (order + 1) * (order + 1)] }
    }

    pub fn order(&self) -> usize {
        (self.coeffs.len() as f64).sqrt() as usize - 1
    }

    pub fn get(&self, s: usize) -> f64 {
        self.coeffs.get(s).copied().unwrap_or(0.0)
    }
}

/// Band-limited isotropic reflectance kernel: zonal coefficients `k_(n)` and
/// the convolution constants `alpha_(n) = sqrt(4 pi / (2n+1)) k_(n)`.
#[derive(Clone, Debug)]
pub struct ReflectanceKernel {
    zonal: Vec<f64>,
    funk_hecke: Vec<f64>,
}

impl ReflectanceKernel {
    pub fn from_zonal(zonal: Vec<f64>) -> Result<Self> {
        if zonal.is_empty() || zonal.len() - 1 > MAX_ORDER {
            return Err(Error::InvalidInput(format!(
                "kernel order must be between 0 and {MAX_ORDER}"
            )));
        }
        if zonal.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidInput("non-finite kernel coefficient".into()));
        }
        let funk_hecke = zonal
            .iter()
            .enumerate()
            .map(|(n, &k)| (4.0 * PI / (2 * n + 1) as f64).sqrt() * k)
            .collect();
        Ok(ReflectanceKernel { zonal, funk_hecke })
    }

    /// Clamped-cosine kernel truncated at order 2, with the closed-form
    /// coefficients: k = (sqrt(pi)/2, sqrt(pi/3), sqrt(5 pi)/8) and
    /// alpha = (pi, 2 pi/3, pi/4).
    pub fn lambertian() -> Self {
        ReflectanceKernel {
            zonal: vec![PI.sqrt() / 2.0, (PI / 3.0).sqrt(), (5.0 * PI).sqrt() / 8.0],
            funk_hecke: vec![PI, 2.0 * PI / 3.0, PI / 4.0],
        }
    }

    /// Presets addressable from the CLI config.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "lambertian" => Ok(Self::lambertian()),
            "constant" => kernel_from_samples(|_| 1.0, 2),
            "cosine-unclamped" => kernel_from_samples(|theta| theta.cos(), 2),
            other => Err(Error::InvalidInput(format!("unknown kernel preset '{other}'"))),
        }
    }

    pub fn max_order(&self) -> usize {
        self.zonal.len() - 1
    }

    pub fn zonal(&self) -> &[f64] {
        &self.zonal
    }

    pub fn funk_hecke(&self) -> &[f64] {
        &self.funk_hecke
    }

    /// Band-limited reconstruction k(theta) = sum_n k_(n) Y_n0(theta).
    pub fn sample(&self, theta: f64) -> f64 {
        let z = theta.cos();
        self.zonal
            .iter()
            .enumerate()
            .map(|(n, &k)| k * ((2 * n + 1) as f64 / (4.0 * PI)).sqrt() * assoc_legendre(n, 0, z))
            .sum()
    }

    /// Operational single-lobe test, checked by sampling the band-limited
    /// reconstruction: the kernel must be monotone non-increasing from
    /// theta = 0 until it first crosses zero, and past that crossing it may
    /// only ring within 10% of its peak (band-limiting an ideal single-lobe
    /// kernel such as the clamped cosine produces exactly this kind of small
    /// ringing).
    pub fn is_single_lobe(&self) -> bool {
        let samples = 512;
        let peak = self.sample(0.0);
        if !(peak > 0.0) {
            return false;
        }
        let mut prev = peak;
        let mut crossed = false;
        for i in 1..=samples {
            let theta = PI * i as f64 / samples as f64;
            let v = self.sample(theta);
            if !crossed {
                if v <= 0.0 {
                    crossed = true;
                } else if v > prev + 1e-9 * peak {
                    return false;
                }
            } else if v > 0.1 * peak {
                return false;
            }
            prev = v;
        }
        true
    }
}

/// Projects a kernel k(theta) onto zonal harmonics by Gauss-Legendre
/// quadrature in cos(theta):
/// k_(n) = 2 pi \int_0^pi k(theta) Y_n0(theta) sin(theta) dtheta.
///
/// 2048 nodes keep the clamped-cosine kernel (whose derivative jumps at
/// pi/2) accurate to ~1e-8.
pub fn kernel_from_samples<F: Fn(f64) -> f64>(k: F, max_order: usize) -> Result<ReflectanceKernel> {
    if max_order > MAX_ORDER {
        return Err(Error::InvalidInput(format!(
            "kernel order {max_order} exceeds the supported maximum {MAX_ORDER}"
        )));
    }
    let (nodes, weights) = gauss_legendre(2048);
    let mut zonal = vec![0.0; max_order + 1];
    for (&z, &w) in nodes.iter().zip(&weights) {
        let theta = z.clamp(-1.0, 1.0).acos();
        let kv = k(theta);
        if !kv.is_finite() {
            return Err(Error::InvalidInput(format!(
                "kernel sample at theta={theta} is not finite"
            )));
        }
        for (n, acc) in zonal.iter_mut().enumerate() {
            let y = ((2 * n + 1) as f64 / (4.0 * PI)).sqrt() * assoc_legendre(n, 0, z);
            *acc += 2.0 * PI * w * kv * y;
        }
    }
    ReflectanceKernel::from_zonal(zonal)
}

/// Shading of a surface normal: rho * sum_s alpha_(n(s)) l_s Y_s(n), with the
/// sum truncated to the smaller of the kernel and lighting orders.
pub fn intensity(
    n: Direction,
    albedo: f64,
    kernel: &ReflectanceKernel,
    light: &LightingCoeffs,
) -> f64 {
    let order = kernel.max_order().min(light.order());
    let mut acc = 0.0;
    for idx in HarmonicIndex::all_up_to(order) {
        let s = idx.flat();
        let alpha = kernel.funk_hecke[idx.n()];
        if alpha == 0.0 {
            continue;
        }
        acc += alpha * light.get(s) * eval_real_sh(idx, n);
    }
    albedo * acc
}

/// The quadratic normal correlation sum_s alpha_(n)² Y_s(n_p) Y_s(n_q) for two
/// normals separated by `theta`, with coordinates fixed to n_p = e_z and
/// n_q = (sin theta, 0, cos theta). Under ideally uniform lights this is
/// proportional to the inner product of the two pixels' intensity vectors.
pub fn kernel_correlation(kernel: &ReflectanceKernel, theta: f64) -> f64 {
    let np = Direction { x: 0.0, y: 0.0, z: 1.0 };
    let nq = Direction { x: theta.sin(), y: 0.0, z: theta.cos() };
    let mut acc = 0.0;
    for idx in HarmonicIndex::all_up_to(kernel.max_order()) {
        let alpha = kernel.funk_hecke[idx.n()];
        if alpha == 0.0 {
            continue;
        }
        acc += alpha * alpha * eval_real_sh(idx, np) * eval_real_sh(idx, nq);
    }
    acc
}

/// Ideal normalized-intensity distance between pixels whose normals are
/// `theta` apart: sqrt(2 - 2 corr(theta)/corr(0)).
pub fn normalized_intensity_distance(kernel: &ReflectanceKernel, theta: f64) -> Result<f64> {
    let c0 = kernel_correlation(kernel, 0.0);
    if c0 <= 0.0 {
        return Err(Error::NotSingleLobe { a: c0, b: 0.0 });
    }
    Ok((2.0 - 2.0 * kernel_correlation(kernel, theta) / c0).max(0.0).sqrt())
}

/// The Taylor pieces of the distance constant: `a` is the correlation at
/// theta = 0 and `b` its quadratic decay rate, both obtained from the exact
/// polynomial expansion of the zonal terms in cos(theta). Off-zonal terms
/// vanish at n_p = e_z and do not contribute.
pub fn distance_constant_parts(kernel: &ReflectanceKernel) -> Result<(f64, f64)> {
    let np = Direction { x: 0.0, y: 0.0, z: 1.0 };
    let mut a = 0.0;
    let mut b = 0.0;
    for idx in HarmonicIndex::all_up_to(kernel.max_order()) {
        let n = idx.n();
        let alpha = kernel.funk_hecke[n];
        let lead = alpha * alpha * eval_real_sh(idx, np);
        if lead == 0.0 {
            continue;
        }
        // Y_s(n_q) = sqrt((2n+1)/4pi) P_n(cos theta) for the surviving zonal
        // terms; expand P_n and read off the value and slope at cos theta = 1.
        let norm = ((2 * n + 1) as f64 / (4.0 * PI)).sqrt();
        let coeffs = legendre_coeffs(n);
        let mut a_s = 0.0;
        let mut b_s = 0.0;
        for (r, &c) in coeffs.iter().enumerate() {
            a_s += c;
            b_s += r as f64 * c;
        }
        a += lead * norm * a_s;
        b += lead * norm * b_s;
    }
    if a <= 0.0 || b < 0.0 {
        return Err(Error::NotSingleLobe { a, b });
    }
    Ok((a, b))
}

/// The constant c = sqrt(b/a) relating normalized-intensity distances to
/// geodesic distances of nearby normals under uniform lighting.
pub fn predicted_distance_constant(kernel: &ReflectanceKernel) -> Result<f64> {
    let (a, b) = distance_constant_parts(kernel)?;
    Ok((b / a).sqrt())
}
