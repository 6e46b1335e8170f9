//! Synthetic scenes and multi-illumination stacks.
//!
//! The renderer exists so every stage of the reconstruction can be verified
//! against ground truth: exact clamped-cosine shading (attached shadows
//! included) next to its band-limited harmonic counterpart, under uniformly
//! sampled directional lights on the full sphere.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sh::{sh_basis, Direction, HarmonicIndex, ReflectanceKernel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlbedoPattern {
    Uniform,
    Checker,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    ExactLambertian,
    ShKernel,
}

/// Ground-truth scene on an orthographic pixel grid. Normals are only
/// meaningful where `mask` is set, and every unmasked normal faces the
/// camera (z > 0).
#[derive(Clone, Debug)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    pub normals: Vec<Direction>,
    pub albedo: Vec<f64>,
}

impl Scene {
    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug)]
pub struct ImageStack {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    /// One image per light, row-major, zero outside the mask.
    pub images: Vec<Vec<f64>>,
    pub lights: Option<Vec<Direction>>,
}

impl ImageStack {
    pub fn image_count(&self) -> usize {
        self.images.len()
    }
}

/// Orthographic sphere: pixels inside the inscribed circle get the outward
/// sphere normal, with image x to the right and image y pointing up.
pub fn make_sphere_scene(resolution: usize, pattern: AlbedoPattern) -> Result<Scene> {
    if resolution < 16 {
        return Err(Error::InvalidInput(format!(
            "sphere scene resolution {resolution} < 16"
        )));
    }
    let n = resolution;
    let r = n as f64 / 2.0;
    let mut mask = vec![false; n * n];
    let mut normals = vec![Direction { x: 0.0, y: 0.0, z: 1.0 }; n * n];
    let mut albedo = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            let x = (col as f64 + 0.5 - r) / r;
            let y = (r - row as f64 - 0.5) / r;
            let rho2 = x * x + y * y;
            if rho2 < 1.0 {
                let i = row * n + col;
                mask[i] = true;
                normals[i] = Direction { x, y, z: (1.0 - rho2).sqrt() };
                albedo[i] = match pattern {
                    AlbedoPattern::Uniform => 1.0,
                    AlbedoPattern::Checker => {
                        if (row / 8 + col / 8) % 2 == 0 {
                            1.0
                        } else {
                            0.5
                        }
                    }
                };
            }
        }
    }
    Ok(Scene { width: n, height: n, mask, normals, albedo })
}

/// i.i.d. uniform directions on the full sphere, deterministic per seed.
pub fn sample_uniform_lights(count: usize, seed: u64) -> Result<Vec<Direction>> {
    if count == 0 {
        return Err(Error::InvalidInput("need at least one light".into()));
    }
    let mut rng = Rng::new(seed);
    Ok((0..count)
        .map(|_| {
            let z = rng.uniform(-1.0, 1.0);
            let phi = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
            let s = (1.0 - z * z).max(0.0).sqrt();
            Direction { x: s * phi.cos(), y: s * phi.sin(), z }
        })
        .collect())
}

/// Renders one image per light. Exact mode shades `rho * max(l.n, 0)`;
/// sh-kernel mode expands each directional light into harmonic coefficients
/// and applies the kernel's convolution constants.
pub fn render_stack(
    scene: &Scene,
    lights: &[Direction],
    mode: RenderMode,
    kernel: Option<&ReflectanceKernel>,
) -> Result<ImageStack> {
    if lights.is_empty() {
        return Err(Error::InvalidInput("empty light list".into()));
    }
    let kernel = match mode {
        RenderMode::ExactLambertian => None,
        RenderMode::ShKernel => Some(kernel.ok_or_else(|| {
            Error::InvalidInput("sh-kernel rendering requires a reflectance kernel".into())
        })?),
    };

    let npx = scene.width * scene.height;
    // Per-pixel harmonic basis, shared across lights in sh mode.
    let basis: Option<Vec<Vec<f64>>> = kernel.map(|k| {
        (0..npx)
            .into_par_iter()
            .map(|i| {
                if scene.mask[i] {
                    sh_basis(k.max_order(), scene.normals[i])
                } else {
                    Vec::new()
                }
            })
            .collect()
    });

    let images: Vec<Vec<f64>> = lights
        .par_iter()
        .map(|light| {
            let mut img = vec![0.0; npx];
            match kernel {
                None => {
                    for i in 0..npx {
                        if scene.mask[i] {
                            img[i] = scene.albedo[i] * light.dot(&scene.normals[i]).max(0.0);
                        }
                    }
                }
                Some(k) => {
                    let order = k.max_order();
                    let light_basis = sh_basis(order, *light);
                    // c_s = alpha_(n(s)) Y_s(l)
                    let coeffs: Vec<f64> = HarmonicIndex::all_up_to(order)
                        .iter()
                        .map(|idx| k.funk_hecke()[idx.n()] * light_basis[idx.flat()])
                        .collect();
                    let basis = basis.as_ref().unwrap();
                    for i in 0..npx {
                        if scene.mask[i] {
                            let dot: f64 =
                                coeffs.iter().zip(&basis[i]).map(|(c, b)| c * b).sum();
                            img[i] = scene.albedo[i] * dot;
                        }
                    }
                }
            }
            img
        })
        .collect();

    Ok(ImageStack {
        width: scene.width,
        height: scene.height,
        mask: scene.mask.clone(),
        images,
        lights: Some(lights.to_vec()),
    })
}

/// Optional additive Gaussian noise; intensities stay non-negative.
pub fn add_gaussian_noise(stack: &mut ImageStack, sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = Rng::new(seed);
    for img in stack.images.iter_mut() {
        for (i, v) in img.iter_mut().enumerate() {
            if stack.mask[i] {
                *v = (*v + sigma * rng.normal()).max(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sh::eval_real_sh;

    #[test]
    fn sphere_scene_geometry() {
        let scene = make_sphere_scene(65, AlbedoPattern::Uniform).unwrap();
        // exact center pixel of an odd-resolution grid
        let center = 32 * 65 + 32;
        assert!(scene.mask[center]);
        let n = scene.normals[center];
        assert!(n.x.abs() < 1e-12 && n.y.abs() < 1e-12 && (n.z - 1.0).abs() < 1e-12);
        // corners are outside the inscribed circle
        assert!(!scene.mask[0]);
        assert!(!scene.mask[64]);
        assert!(!scene.mask[65 * 65 - 1]);
        for i in 0..scene.mask.len() {
            if scene.mask[i] {
                assert!(scene.normals[i].is_unit(1e-12));
                assert!(scene.normals[i].z > 0.0);
            }
        }
        assert!(make_sphere_scene(15, AlbedoPattern::Uniform).is_err());
    }

    #[test]
    fn lights_are_unit_and_deterministic() {
        let a = sample_uniform_lights(500, 9).unwrap();
        let b = sample_uniform_lights(500, 9).unwrap();
        for (la, lb) in a.iter().zip(&b) {
            assert_eq!(la, lb);
            assert!(la.is_unit(1e-12));
        }
        assert!(sample_uniform_lights(0, 1).is_err());
    }

    #[test]
    fn lights_have_small_mean() {
        let lights = sample_uniform_lights(10_000, 123).unwrap();
        let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
        for l in &lights {
            x += l.x;
            y += l.y;
            z += l.z;
        }
        let n = lights.len() as f64;
        let norm = ((x / n).powi(2) + (y / n).powi(2) + (z / n).powi(2)).sqrt();
        assert!(norm < 0.03, "mean light vector norm {norm}");
    }

    #[test]
    fn aligned_and_opposed_lights() {
        let scene = make_sphere_scene(65, AlbedoPattern::Uniform).unwrap();
        let center = 32 * 65 + 32;
        let up = Direction { x: 0.0, y: 0.0, z: 1.0 };
        let down = Direction { x: 0.0, y: 0.0, z: -1.0 };
        let stack =
            render_stack(&scene, &[up, down], RenderMode::ExactLambertian, None).unwrap();
        assert!((stack.images[0][center] - 1.0).abs() < 1e-12);
        assert_eq!(stack.images[1][center], 0.0);
        assert!(render_stack(&scene, &[], RenderMode::ExactLambertian, None).is_err());
    }

    #[test]
    fn albedo_scaling_is_linear() {
        let mut scene = make_sphere_scene(32, AlbedoPattern::Checker).unwrap();
        let lights = sample_uniform_lights(5, 3).unwrap();
        let a = render_stack(&scene, &lights, RenderMode::ExactLambertian, None).unwrap();
        for v in scene.albedo.iter_mut() {
            *v *= 3.0;
        }
        let b = render_stack(&scene, &lights, RenderMode::ExactLambertian, None).unwrap();
        for (ia, ib) in a.images.iter().zip(&b.images) {
            for (va, vb) in ia.iter().zip(ib) {
                assert!((3.0 * va - vb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_and_sh_renderings_agree() {
        let scene = make_sphere_scene(48, AlbedoPattern::Uniform).unwrap();
        let lights = sample_uniform_lights(64, 17).unwrap();
        let kernel = ReflectanceKernel::lambertian();
        let exact = render_stack(&scene, &lights, RenderMode::ExactLambertian, None).unwrap();
        let sh = render_stack(&scene, &lights, RenderMode::ShKernel, Some(&kernel)).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (ie, is) in exact.images.iter().zip(&sh.images) {
            for i in 0..ie.len() {
                if scene.mask[i] {
                    num += (ie[i] - is[i]).powi(2);
                    den += ie[i].powi(2);
                }
            }
        }
        let rel_rms = (num / den).sqrt();
        // Truncation error of the order-2 clamped cosine, measured over the
        // sphere scene.
        assert!(rel_rms < 0.10, "relative RMS {rel_rms}");
        assert!(rel_rms > 0.02, "suspiciously small RMS {rel_rms}");
    }

    #[test]
    fn empirical_light_gram_is_near_identity() {
        let lights = sample_uniform_lights(2000, 77).unwrap();
        let indices = HarmonicIndex::all_up_to(2);
        let k = lights.len() as f64;
        for (si, &a) in indices.iter().enumerate() {
            for (ti, &b) in indices.iter().enumerate() {
                // Monte-Carlo estimate of the S² inner product (the 4pi
                // factor is the uniform measure's normalization).
                let acc: f64 = lights
                    .iter()
                    .map(|l| eval_real_sh(a, *l) * eval_real_sh(b, *l))
                    .sum();
                let val = 4.0 * std::f64::consts::PI * acc / k;
                let want = if si == ti { 1.0 } else { 0.0 };
                assert!(
                    (val - want).abs() < 0.05,
                    "L[{si}][{ti}] = {val}, want {want}"
                );
            }
        }
    }
}
