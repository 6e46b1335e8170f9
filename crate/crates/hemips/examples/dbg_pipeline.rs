use hemips::baselines::mean_angle_error;
use hemips::config::PipelineConfig;
use hemips::pipeline::reconstruct_stack;
use hemips::reconstruct::{integrate_depth, Convexity, NormalField};
use hemips::render::{make_sphere_scene, render_stack, sample_uniform_lights, AlbedoPattern, RenderMode};

fn main() {
    let cfg = PipelineConfig {
        resolution: 64,
        lights: 90,
        favor_threshold: 0.3,
        row_sum_mode: "inverse-r-squared".into(),
        weight_max_iter: 60000,
        ..Default::default()
    };
    let scene = make_sphere_scene(cfg.resolution, AlbedoPattern::Uniform).unwrap();
    let lights = sample_uniform_lights(cfg.lights, cfg.seed).unwrap();
    let stack = render_stack(&scene, &lights, RenderMode::ExactLambertian, None).unwrap();
    let out = reconstruct_stack(&stack, &cfg).unwrap();
    let truth = NormalField {
        width: scene.width,
        height: scene.height,
        mask: scene.mask.clone(),
        normals: scene.normals.iter().map(|n| [n.x, n.y, n.z]).collect(),
        interpolated: vec![false; scene.mask.len()],
        z_floor: 0.0,
    };
    println!("angle {:.2}", mean_angle_error(&out.normals, &truth).unwrap());
    // error anatomy by true z band: mean angle and mean signed polar tilt
    for band in 0..5 {
        let mut angle = 0.0;
        let mut polar = 0.0; // + means recovered tilted toward the pole
        let mut n = 0.0;
        for i in 0..scene.mask.len() {
            if !scene.mask[i] {
                continue;
            }
            let t = scene.normals[i];
            if !(t.z >= band as f64 * 0.2 && t.z < (band + 1) as f64 * 0.2) {
                continue;
            }
            let g = out.normals.normals[i];
            let dot = (g[0] * t.x + g[1] * t.y + g[2] * t.z).clamp(-1.0, 1.0);
            angle += dot.acos().to_degrees();
            // polar tilt: compare polar angles
            polar += (t.z.acos() - g[2].clamp(-1.0, 1.0).acos()).to_degrees();
            n += 1.0;
        }
        if n > 0.0 {
            println!("z band {band}: mean angle {:.2}, mean polar tilt {:+.2} (n={n})", angle / n, polar / n);
        }
    }
    // depth from TRUE normals (clamped) on same mask as sanity
    let clamped: Vec<[f64; 3]> = scene
        .normals
        .iter()
        .map(|t| {
            if t.z >= 0.15 {
                [t.x, t.y, t.z]
            } else {
                let s = (1.0f64 - 0.0225).sqrt() / (t.x * t.x + t.y * t.y).sqrt();
                [t.x * s, t.y * s, 0.15]
            }
        })
        .collect();
    let truth_clamped = NormalField { normals: clamped, ..truth.clone() };
    let d_true = integrate_depth(&truth_clamped, Convexity::Auto).unwrap();
    let radius = cfg.resolution as f64 / 2.0;
    let rmse_of = |z: &[f64]| {
        let mut diff = Vec::new();
        for i in 0..scene.mask.len() {
            if scene.mask[i] {
                diff.push(z[i] - radius * scene.normals[i].z);
            }
        }
        let mean = diff.iter().sum::<f64>() / diff.len() as f64;
        (diff.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diff.len() as f64).sqrt()
    };
    println!("depth rmse: recovered {:.2}%  true-clamped {:.2}%", 100.0 * rmse_of(&out.depth.z) / radius, 100.0 * rmse_of(&d_true.z) / radius);
    println!("boundary {} rot {:.2} refl {} negated {}", out.report.boundary_count, out.report.rotation_angle_deg, out.report.reflected, out.report.depth_negated);
    // detected boundary z stats
    let bpx: Vec<f64> = (0..out.graph.node_count())
        .filter(|_| false)
        .map(|_| 0.0)
        .collect();
    let _ = bpx;
}
