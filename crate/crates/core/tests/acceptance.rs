//! Acceptance suite: one test per criterion, each printing a
//! `ACCEPTANCE NN <name>: PASS` line on success (run with `--nocapture`).
//!
//! Heavy criteria serialize on a global lock so wall-clock budgets are
//! meaningful even when the harness runs tests on multiple threads.
//! The full suite is compute-bound; expect tens of minutes on two cores.

use nalgebra::Vector3;
use rand::Rng;
use rfdeblur_core::blursynth::{
    self, BlurConfig, DatasetManifest, DegradationParams, SynthConfig,
};
use rfdeblur_core::deblur::{
    convolve, deconv_guided, deconv_guided_circular, estimate_kernel, guided_objective,
    DeblurConfig, Kernel,
};
use rfdeblur_core::eval::{self, MetricSpace};
use rfdeblur_core::geometry::{Camera, Pose, Ray, Trajectory};
use rfdeblur_core::image::LinearImage;
use rfdeblur_core::io;
use rfdeblur_core::pipeline::{self, PipelineConfig};
use rfdeblur_core::scene::{Primitive, Scene, Shape};
use rfdeblur_core::voxelrf::{
    self, grad_ray, quadrature_weights, render_ray, softplus_inv, Aabb, TrainConfig, VoxelGrid,
    MAX_SH, SH_C0,
};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

static HEAVY: Mutex<()> = Mutex::new(());

fn pass(n: usize, name: &str) {
    println!("ACCEPTANCE {n:02} {name}: PASS");
}

fn unit_aabb() -> Aabb {
    Aabb::new([-1.0; 3], [1.0; 3]).unwrap()
}

fn random_grid(seed: u64, res: [usize; 3], degree: u8) -> VoxelGrid {
    let mut rng = rfdeblur_core::rng::stream(seed, &[1]);
    let mut grid = VoxelGrid::new(res, unit_aabb(), degree).unwrap();
    for v in grid.density_raw_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    let n = grid.n_voxels();
    let n_coeffs = grid.n_sh_coeffs();
    for vox in 0..n {
        for c in 0..3 {
            grid.sh_coeffs_mut()[(vox * 3 + c) * MAX_SH] = rng.gen_range(0.5..1.5);
            for m in 1..n_coeffs {
                grid.sh_coeffs_mut()[(vox * 3 + c) * MAX_SH + m] = rng.gen_range(-0.05..0.05);
            }
        }
    }
    grid
}

fn random_interior_ray(rng: &mut impl Rng) -> Ray {
    Ray::new(
        Vector3::new(
            rng.gen_range(-3.0..-2.0),
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
        ),
        Vector3::new(
            1.0,
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
        ),
    )
}

fn textured_image(w: usize, h: usize, seed: u64) -> LinearImage {
    let mut rng = rfdeblur_core::rng::stream(seed, &[77]);
    let mut img = LinearImage::constant(w, h, [0.25, 0.3, 0.35]);
    for _ in 0..12 {
        let x0 = rng.gen_range(0..w - 4);
        let y0 = rng.gen_range(0..h - 4);
        let bw = rng.gen_range(3..w / 3);
        let bh = rng.gen_range(3..h / 3);
        let color = [
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
        ];
        for y in y0..(y0 + bh).min(h) {
            for x in x0..(x0 + bw).min(w) {
                img.set(x, y, color);
            }
        }
    }
    img
}

// ---------------------------------------------------------------------------
// 1. Gradient contract

#[test]
fn criterion_01_gradient_contract() {
    let _lock = HEAVY.lock().unwrap();
    let start = Instant::now();
    let mut configs = 0;
    let mut worst: f64 = 0.0;
    let mut trial = 0u64;
    while configs < 100 {
        trial += 1;
        let res = [
            4 + (trial % 5) as usize,
            4 + ((trial / 2) % 5) as usize,
            4 + ((trial / 3) % 5) as usize,
        ];
        let degree = (trial % 2) as u8;
        // Colors are sampled away from the clamp kink (positive DC margin)
        // so central differences measure the same smooth branch.
        let mut grid = random_grid(1000 + trial, res, degree);
        let mut rng = rfdeblur_core::rng::stream(2000 + trial, &[3]);
        let ray = random_interior_ray(&mut rng);
        let Some((t0, t1)) = grid.aabb().ray_range(&ray) else {
            continue;
        };
        let target = [
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
        ];
        let bg = [
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
        ];
        let steps = 10;
        let g = grad_ray(&grid, &ray, target, t0, t1, steps, bg);
        if g.entries.is_empty() {
            continue;
        }
        configs += 1;

        let mut analytic: std::collections::HashMap<(bool, usize), f64> =
            std::collections::HashMap::new();
        let n_coeffs = grid.n_sh_coeffs();
        for (vox, pg) in &g.entries {
            *analytic.entry((true, *vox as usize)).or_default() += pg.density_raw;
            for c in 0..3 {
                for m in 0..n_coeffs {
                    let flat = (*vox as usize * 3 + c) * MAX_SH + m;
                    *analytic.entry((false, flat)).or_default() += pg.sh[c][m];
                }
            }
        }
        // Check a bounded sample of parameters per configuration.
        let mut params: Vec<(&(bool, usize), &f64)> = analytic.iter().collect();
        params.sort_by_key(|(k, _)| **k);
        for (&(is_density, flat), &a) in params.into_iter().step_by(7).take(24) {
            let h = 1e-4;
            let loss = |g: &VoxelGrid| {
                let c = render_ray(g, &ray, t0, t1, steps, bg).unwrap();
                (0..3).map(|ch| (c[ch] - target[ch]).powi(2)).sum::<f64>()
            };
            let slot = |g: &mut VoxelGrid| -> *mut f64 {
                if is_density {
                    &mut g.density_raw_mut()[flat]
                } else {
                    &mut g.sh_coeffs_mut()[flat]
                }
            };
            let original = unsafe { *slot(&mut grid) };
            unsafe { *slot(&mut grid) = original + h };
            let up = loss(&grid);
            unsafe { *slot(&mut grid) = original - h };
            let down = loss(&grid);
            unsafe { *slot(&mut grid) = original };
            let fd = (up - down) / (2.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(
                rel < 1e-3,
                "config {configs}: param ({is_density},{flat}) analytic {a} vs fd {fd} (rel {rel})"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 60,
        "gradient contract took {elapsed:?} (budget 1 minute)"
    );
    eprintln!("criterion 1: worst relative error {worst:.3e} in {elapsed:?}");
    pass(1, "analytic gradients match finite differences (rel < 1e-3, 100 configs)");
}

// ---------------------------------------------------------------------------
// 2. Volume-rendering oracle

#[test]
fn criterion_02_homogeneous_medium_oracle() {
    let mut rng = rfdeblur_core::rng::stream(7, &[2]);
    for _ in 0..20 {
        let sigma: f64 = rng.gen_range(0.1..5.0);
        let c: f64 = rng.gen_range(0.1..1.0);
        let bg: f64 = rng.gen_range(0.0..1.0);
        let mut grid = VoxelGrid::new([4, 4, 4], unit_aabb(), 0).unwrap();
        grid.density_raw_mut().fill(softplus_inv(sigma));
        let dc = c / SH_C0;
        for vox in 0..grid.n_voxels() {
            for ch in 0..3 {
                grid.sh_coeffs_mut()[(vox * 3 + ch) * MAX_SH] = dc;
            }
        }
        let ray = random_interior_ray(&mut rng);
        let Some((t0, t1)) = grid.aabb().ray_range(&ray) else {
            continue;
        };
        let len = t1 - t0;
        let got = render_ray(&grid, &ray, t0, t1, 1024, [bg; 3]).unwrap();
        let want = c * (1.0 - (-sigma * len).exp()) + bg * (-sigma * len).exp();
        for ch in 0..3 {
            assert!(
                (got[ch] - want).abs() < 1e-4,
                "sigma {sigma} c {c} L {len}: got {} want {want}",
                got[ch]
            );
        }
    }
    pass(2, "homogeneous-medium render matches closed form within 1e-4");
}

// ---------------------------------------------------------------------------
// 3. Partition of unity

#[test]
fn criterion_03_partition_of_unity() {
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 1000 {
        seed += 1;
        let grid = random_grid(300 + seed / 50, [5, 5, 5], (seed % 2) as u8);
        let mut rng = rfdeblur_core::rng::stream(400 + seed, &[4]);
        let ray = random_interior_ray(&mut rng);
        let Some((t0, t1)) = grid.aabb().ray_range(&ray) else {
            continue;
        };
        let (weights, t_final) = quadrature_weights(&grid, &ray, t0, t1, 32);
        let total: f64 = weights.iter().sum::<f64>() + t_final;
        assert!(
            (total - 1.0).abs() < 1e-6,
            "ray {seed}: weights sum to {total}"
        );
        checked += 1;
    }
    pass(3, "quadrature weights + final transmittance sum to 1 (1000 rays)");
}

// ---------------------------------------------------------------------------
// 4. Noise-model fidelity

#[test]
fn criterion_04_noise_model_fidelity() {
    let _lock = HEAVY.lock().unwrap();
    let start = Instant::now();
    // ccm = I, wb = 1: RAW space coincides with linear sRGB, so the variance
    // audit happens directly on the degraded linear image.
    for (i, level) in [0.1, 0.2, 0.3, 0.5, 0.7].into_iter().enumerate() {
        let n = 1_000_000;
        let img = LinearImage::constant(1000, n / 1000, [level; 3]);
        let p = DegradationParams {
            rng_seed: 50 + i as u64,
            ..Default::default()
        };
        let noised = blursynth::degrade_linear(&img, &p).unwrap();
        let mut var = 0.0;
        for px in noised.pixels() {
            let d = px[0] - level;
            var += d * d;
        }
        var /= n as f64;
        let expected = p.shot_alpha * level + p.read_sigma * p.read_sigma;
        let rel = (var - expected).abs() / expected;
        assert!(
            rel < 0.05,
            "level {level}: variance {var:.3e} vs model {expected:.3e} (rel {rel:.3})"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "noise audit took {elapsed:?}");
    pass(4, "degradation variance matches shot_alpha*x + read_sigma^2 within 5%");
}

// ---------------------------------------------------------------------------
// 5. Motion-blur construction

#[test]
fn criterion_05_motion_blur_construction() {
    let scene = toy_scenes()[0].1.clone();
    let camera = Camera::new(56.0, 56.0, 24.0, 24.0, 48, 48).unwrap();
    let pose = Pose::look_at(Vector3::new(0.2, 1.4, 3.9), Vector3::zeros(), Vector3::y());

    // Static camera: the average IS the ground truth, bit for bit.
    let constant = Trajectory::constant(pose);
    let (blurred, gt) = blursynth::synth_motion_blur(&scene, &camera, &constant, 51).unwrap();
    assert_eq!(blurred, gt);

    // 51 frames: ground truth is the 26th (1-based), i.e. t = 0.5.
    let moved = Pose::new(pose.rotation, pose.translation + Vector3::new(0.15, 0.0, 0.0));
    let traj = Trajectory::new(vec![pose, moved]).unwrap();
    let (_, gt) = blursynth::synth_motion_blur(&scene, &camera, &traj, 51).unwrap();
    let central = rfdeblur_core::geometry::bezier_pose(&traj, 0.5).unwrap();
    let expected = rfdeblur_core::scene::render_pinhole(&scene, &camera, &central);
    assert_eq!(gt, expected);
    pass(5, "constant trajectory is bit-exact; n=51 ground truth is frame 26");
}

// ---------------------------------------------------------------------------
// 6. Kernel estimation oracle

#[test]
fn criterion_06_kernel_estimation_oracle() {
    let _lock = HEAVY.lock().unwrap();
    let mut instances = Vec::new();
    for (i, &size) in [5usize, 7, 9, 11, 13].iter().enumerate() {
        let len = (size - 2) as f64;
        instances.push((size, Kernel::motion_line(size, len, 0.35 + i as f64 * 0.5).unwrap()));
        instances.push((size, Kernel::motion_line(size, len, 1.9 + i as f64 * 0.3).unwrap()));
        instances.push((size, Kernel::gaussian(size, 0.5 + 0.22 * i as f64).unwrap()));
        instances.push((size, Kernel::disc(size, 0.8 + 0.45 * i as f64).unwrap()));
    }
    assert_eq!(instances.len(), 20);

    // Dense texture: estimation variance scales inversely with the guide's
    // edge content, and the 13x13 instances need every informative row.
    let dense_guide = |seed: u64| {
        let mut rng = rfdeblur_core::rng::stream(seed, &[78]);
        let (w, h) = (128usize, 128usize);
        let mut img = LinearImage::constant(w, h, [0.25, 0.3, 0.35]);
        for _ in 0..220 {
            let x0 = rng.gen_range(0..w - 4);
            let y0 = rng.gen_range(0..h - 4);
            let bw = rng.gen_range(3..8);
            let bh = rng.gen_range(3..8);
            let color = [
                rng.gen_range(0.05..0.95),
                rng.gen_range(0.05..0.95),
                rng.gen_range(0.05..0.95),
            ];
            for y in y0..(y0 + bh).min(h) {
                for x in x0..(x0 + bw).min(w) {
                    img.set(x, y, color);
                }
            }
        }
        img
    };
    let mut worst_clean: f64 = 0.0;
    let mut worst_noisy: f64 = 0.0;
    for (i, (size, truth)) in instances.iter().enumerate() {
        let guide = dense_guide(600 + i as u64);
        let blurred = convolve(&guide, truth);
        let cfg = DeblurConfig {
            kernel_size: *size,
            estimation_stride: 1,
            ..Default::default()
        };
        let est = estimate_kernel(&blurred, &guide, &cfg).unwrap();
        let err = est.l1_distance(truth);
        worst_clean = worst_clean.max(err);
        assert!(err <= 0.05, "instance {i} (size {size}): clean L1 {err}");

        let mut noisy = blurred.clone();
        let mut rng = rfdeblur_core::rng::stream(700 + i as u64, &[1]);
        for p in noisy.pixels_mut() {
            for c in 0..3 {
                p[c] = (p[c] + 0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal)).max(0.0);
            }
        }
        let est = estimate_kernel(&noisy, &guide, &cfg).unwrap();
        let err = est.l1_distance(truth);
        worst_noisy = worst_noisy.max(err);
        assert!(err <= 0.15, "instance {i} (size {size}): noisy L1 {err}");
    }
    eprintln!("criterion 6: worst L1 clean {worst_clean:.4}, noisy {worst_noisy:.4}");
    pass(6, "kernel recovery L1 <= 0.05 clean / 0.15 at noise sigma 0.01 (20 instances)");
}

// ---------------------------------------------------------------------------
// 7. Guided deconvolution optimality

#[test]
fn criterion_07_guided_deconvolution_optimality() {
    let mut rng = rfdeblur_core::rng::stream(13, &[2]);
    for inst in 0..10u64 {
        let b = textured_image(32, 32, 800 + inst);
        let g = textured_image(32, 32, 900 + inst);
        let k = match inst % 3 {
            0 => Kernel::motion_line(7, 5.0, 0.4 * inst as f64).unwrap(),
            1 => Kernel::gaussian(7, 1.0 + 0.1 * inst as f64).unwrap(),
            _ => Kernel::disc(7, 1.5).unwrap(),
        };
        let mu = if inst % 2 == 0 { 0.05 } else { 0.2 };
        let d = deconv_guided_circular(&b, &k, &g, mu).unwrap();
        let base = guided_objective(&d, &b, &k, &g, mu);
        for _ in 0..100 {
            let mut perturbed = d.clone();
            for p in perturbed.pixels_mut() {
                for c in 0..3 {
                    p[c] += 1e-2 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
            }
            let obj = guided_objective(&perturbed, &b, &k, &g, mu);
            assert!(
                obj >= base - 1e-9,
                "instance {inst}: perturbation beat the solver ({obj} < {base})"
            );
        }
    }
    // mu -> infinity returns the guide.
    let b = textured_image(32, 32, 810);
    let g = textured_image(32, 32, 910);
    let out = deconv_guided(&b, &Kernel::gaussian(7, 1.2).unwrap(), &g, 1e6).unwrap();
    for (a, want) in out.pixels().iter().zip(g.pixels()) {
        for c in 0..3 {
            assert!((a[c] - want[c]).abs() <= 1e-3);
        }
    }
    pass(7, "guided deconvolution minimizes its objective; mu->inf returns the guide");
}

// ---------------------------------------------------------------------------
// 8. RF self-consistency fit

#[test]
fn criterion_08_rf_self_consistency() {
    let _lock = HEAVY.lock().unwrap();
    let start = Instant::now();
    let reference = voxelrf::upsample(&random_grid(13, [8, 8, 8], 1), 16);
    let camera = Camera::new(72.0, 72.0, 32.0, 32.0, 64, 64).unwrap();
    let bg = [0.3, 0.3, 0.3];
    let orbit = |i: usize, n: usize| {
        let az = std::f64::consts::TAU * i as f64 / n as f64;
        Pose::look_at(
            Vector3::new(3.2 * az.cos(), 0.9, 3.2 * az.sin()),
            Vector3::zeros(),
            Vector3::y(),
        )
    };
    let poses: Vec<Pose> = (0..20).map(|i| orbit(i, 20)).collect();
    let views: Vec<LinearImage> = poses
        .iter()
        .map(|p| voxelrf::render_view(&reference, &camera, p, bg, 64))
        .collect();
    let cfg = TrainConfig {
        iterations: 3000,
        initial_resolution: [16, 16, 16],
        max_resolution: 16,
        prune_upsample_every: 0,
        rays_per_batch: 1024,
        n_steps_per_ray: 64,
        background: bg,
        ..Default::default()
    };
    let outcome = voxelrf::train_rf(&views, &poses, &camera, &cfg, 21).unwrap();

    // Held-out poses interleave the training orbit.
    let mut psnr_acc = 0.0;
    let mut n_held = 0;
    for i in 0..5 {
        let pose = orbit(2 * i + 1, 40);
        let got = voxelrf::render_view(&outcome.grid, &camera, &pose, bg, 64);
        let want = voxelrf::render_view(&reference, &camera, &pose, bg, 64);
        psnr_acc += eval::psnr(&got, &want, 1.0).unwrap();
        n_held += 1;
    }
    let psnr = psnr_acc / n_held as f64;
    let elapsed = start.elapsed();
    eprintln!("criterion 8: held-out PSNR {psnr:.2} dB in {elapsed:?}");
    assert!(psnr >= 30.0, "held-out PSNR {psnr} below 30 dB");
    assert!(
        elapsed.as_secs() < 300,
        "self-consistency fit took {elapsed:?} (budget 5 minutes)"
    );
    pass(8, "self-consistency fit reaches >= 30 dB held-out within 5 minutes");
}

// ---------------------------------------------------------------------------
// 9 + 10. End-to-end iteration trend on the toy benchmark

fn toy_scenes() -> Vec<(&'static str, Scene)> {
    let sphere = |center: [f64; 3], radius: f64, albedo: [f64; 3], emission: [f64; 3]| Primitive {
        shape: Shape::Sphere {
            center: Vector3::from(center),
            radius,
        },
        albedo: Vector3::from(albedo),
        emission: Vector3::from(emission),
    };
    let boxp = |min: [f64; 3], max: [f64; 3], albedo: [f64; 3]| Primitive {
        shape: Shape::Box {
            min: Vector3::from(min),
            max: Vector3::from(max),
        },
        albedo: Vector3::from(albedo),
        emission: Vector3::zeros(),
    };

    let orbs = Scene::new(
        vec![
            sphere([-0.55, 0.0, 0.1], 0.5, [0.85, 0.25, 0.2], [0.0; 3]),
            sphere([0.55, -0.1, -0.2], 0.42, [0.2, 0.45, 0.85], [0.0; 3]),
            sphere([0.05, 0.55, 0.35], 0.3, [0.3, 0.8, 0.35], [0.0; 3]),
            sphere([-0.15, 0.75, -0.5], 0.12, [0.0; 3], [1.9, 1.8, 1.6]),
            boxp([-1.3, -0.85, -1.3], [1.3, -0.55, 1.3], [0.55, 0.5, 0.45]),
        ],
        Vector3::new(0.10, 0.12, 0.16),
        Vector3::new(0.4, 1.0, 0.3),
    )
    .unwrap();

    let blocks = Scene::new(
        vec![
            boxp([-0.9, -0.55, -0.35], [-0.25, 0.45, 0.3], [0.8, 0.6, 0.2]),
            boxp([0.15, -0.55, -0.5], [0.7, 0.05, 0.1], [0.25, 0.3, 0.75]),
            boxp([0.35, 0.05, -0.15], [0.95, 0.4, 0.45], [0.7, 0.25, 0.5]),
            boxp([-0.15, -0.55, 0.45], [0.3, 0.7, 0.9], [0.3, 0.7, 0.6]),
            sphere([0.0, 0.85, -0.6], 0.14, [0.0; 3], [2.1, 2.0, 1.7]),
            boxp([-1.3, -0.9, -1.3], [1.3, -0.58, 1.3], [0.45, 0.45, 0.5]),
        ],
        Vector3::new(0.12, 0.11, 0.13),
        Vector3::new(-0.3, 1.0, 0.4),
    )
    .unwrap();

    let stripes = {
        let mut prims = vec![
            sphere([0.45, 0.1, 0.4], 0.4, [0.75, 0.7, 0.25], [0.0; 3]),
            sphere([-0.5, -0.05, -0.35], 0.35, [0.6, 0.3, 0.7], [0.0; 3]),
            sphere([-0.55, 0.7, 0.45], 0.13, [0.0; 3], [1.8, 1.9, 2.0]),
        ];
        for i in 0..6 {
            let x0 = -1.25 + i as f64 * 0.42;
            let albedo = if i % 2 == 0 {
                [0.75, 0.72, 0.68]
            } else {
                [0.22, 0.25, 0.3]
            };
            prims.push(boxp([x0, -0.85, -1.25], [x0 + 0.42, -0.6, 1.25], albedo));
        }
        Scene::new(
            prims,
            Vector3::new(0.1, 0.12, 0.15),
            Vector3::new(0.25, 1.0, -0.35),
        )
        .unwrap()
    };

    vec![("orbs", orbs), ("blocks", blocks), ("stripes", stripes)]
}

fn benchmark_synth_config(seed: u64, same_direction: bool) -> SynthConfig {
    SynthConfig {
        train_views: 29,
        novel_views: 5,
        width: 96,
        height: 96,
        focal_px: 110.0,
        blur: BlurConfig::Motion {
            translation_mag: 0.30,
            rotation_mag: 0.002,
            n_controls: 4,
            n_frames: 51,
            same_direction,
        },
        seed,
        ..Default::default()
    }
}

fn benchmark_pipeline_config(workdir: &Path, seed: u64) -> PipelineConfig {
    let rf_schedule: Vec<TrainConfig> = (0..5)
        .map(|i| {
            let iterations = 1000 + 350 * i;
            TrainConfig {
                iterations,
                initial_resolution: [32, 32, 32],
                max_resolution: 64,
                prune_upsample_every: iterations / 2,
                rays_per_batch: 1024,
                n_steps_per_ray: 64,
                ..Default::default()
            }
        })
        .collect();
    PipelineConfig {
        n_iterations: 5,
        rf_schedule,
        deblur: DeblurConfig {
            kernel_size: 13,
            guidance_mu: 0.1,
            ..Default::default()
        },
        render_steps: 64,
        metric_space: MetricSpace::Display,
        workdir: workdir.to_path_buf(),
        seed,
        ..Default::default()
    }
}

/// Run the 3-scene benchmark; returns the per-iteration mean held-out PSNR
/// series (index 0 = N=1).
fn run_benchmark(tag: &str, same_direction: bool) -> Vec<f64> {
    let tmp = tempfile::tempdir().unwrap();
    let mut series = vec![0.0f64; 5];
    for (i, (name, scene)) in toy_scenes().into_iter().enumerate() {
        let data_dir = tmp.path().join(format!("{name}_data"));
        let synth_cfg = benchmark_synth_config(100 + i as u64, same_direction);
        let t0 = Instant::now();
        let manifest = blursynth::generate_dataset(&scene, name, &synth_cfg, &data_dir).unwrap();
        eprintln!("[{tag}/{name}] dataset generated in {:?}", t0.elapsed());

        let blurred: Vec<_> = manifest
            .train_views
            .iter()
            .map(|rec| io::read_png(&data_dir.join(&rec.blurred_path)).unwrap())
            .collect();
        let work = tmp.path().join(format!("{name}_work"));
        let cfg = benchmark_pipeline_config(&work, 200 + i as u64);
        let t0 = Instant::now();
        let outcome = pipeline::run_pipeline(&blurred, &manifest, &data_dir, &cfg).unwrap();
        eprintln!(
            "[{tag}/{name}] pipeline N=5 in {:?}; PSNR series: {:?}",
            t0.elapsed(),
            outcome
                .iterations
                .iter()
                .map(|s| (s.heldout_psnr_db * 100.0).round() / 100.0)
                .collect::<Vec<_>>()
        );
        assert_eq!(outcome.iterations.len(), 5);
        for (k, s) in outcome.iterations.iter().enumerate() {
            series[k] += s.heldout_psnr_db / 3.0;
        }
    }
    series
}

#[test]
fn criterion_09_iteration_trend() {
    let _lock = HEAVY.lock().unwrap();
    let start = Instant::now();
    let series = run_benchmark("c9", false);
    let elapsed = start.elapsed();
    eprintln!("criterion 9: mean PSNR series {series:?} in {elapsed:?}");
    let gain = series[4] - series[0];
    assert!(
        gain >= 0.5,
        "PSNR(N=5) - PSNR(N=1) = {gain:.3} dB, need >= 0.5 dB (series {series:?})"
    );
    for w in series.windows(2) {
        assert!(
            w[1] >= w[0] - 0.1,
            "per-iteration series not non-decreasing within 0.1 dB: {series:?}"
        );
    }
    assert!(
        elapsed.as_secs() <= 1800,
        "benchmark took {elapsed:?} (budget 30 minutes)"
    );
    pass(9, "toy benchmark: PSNR(N=5) - PSNR(N=1) >= 0.5 dB, non-decreasing series");
}

#[test]
fn criterion_10_same_blur_direction_robustness() {
    let _lock = HEAVY.lock().unwrap();
    let series = run_benchmark("c10", true);
    eprintln!("criterion 10: mean PSNR series {series:?}");
    let gain = series[4] - series[0];
    assert!(
        gain > 0.0,
        "shared-direction gain must remain positive, got {gain:.3} dB (series {series:?})"
    );
    pass(10, "shared blur direction still gains: PSNR(N=5) > PSNR(N=1)");
}

// ---------------------------------------------------------------------------
// 11. Determinism

#[test]
fn criterion_11_determinism() {
    let _lock = HEAVY.lock().unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let scene = toy_scenes()[1].1.clone();
    let synth_cfg = SynthConfig {
        train_views: 8,
        novel_views: 2,
        width: 44,
        height: 44,
        focal_px: 50.0,
        blur: BlurConfig::Motion {
            translation_mag: 0.12,
            rotation_mag: 0.002,
            n_controls: 3,
            n_frames: 11,
            same_direction: false,
        },
        seed: 77,
        ..Default::default()
    };

    // Dataset generation is byte-deterministic.
    let data_a = tmp.path().join("data_a");
    let data_b = tmp.path().join("data_b");
    blursynth::generate_dataset(&scene, "det", &synth_cfg, &data_a).unwrap();
    blursynth::generate_dataset(&scene, "det", &synth_cfg, &data_b).unwrap();
    assert_eq!(
        io::dir_digest(&data_a).unwrap(),
        io::dir_digest(&data_b).unwrap()
    );

    let manifest = DatasetManifest::load(&data_a).unwrap();
    let blurred: Vec<_> = manifest
        .train_views
        .iter()
        .map(|rec| io::read_png(&data_a.join(&rec.blurred_path)).unwrap())
        .collect();
    let pipeline_cfg = |workdir: &Path| PipelineConfig {
        n_iterations: 2,
        rf_schedule: vec![TrainConfig {
            iterations: 250,
            initial_resolution: [16, 16, 16],
            max_resolution: 16,
            prune_upsample_every: 0,
            rays_per_batch: 512,
            n_steps_per_ray: 32,
            ..Default::default()
        }],
        deblur: DeblurConfig {
            kernel_size: 7,
            ..Default::default()
        },
        render_steps: 48,
        workdir: workdir.to_path_buf(),
        seed: 5,
        ..Default::default()
    };

    // Two identical runs produce byte-identical artifact trees.
    let work_a = tmp.path().join("work_a");
    let work_b = tmp.path().join("work_b");
    pipeline::run_pipeline(&blurred, &manifest, &data_a, &pipeline_cfg(&work_a)).unwrap();
    pipeline::run_pipeline(&blurred, &manifest, &data_a, &pipeline_cfg(&work_b)).unwrap();
    for entry in ["initial", "iter_01", "iter_02", "grid.ckpt", "state.ckpt", "run.toml"] {
        assert_eq!(
            io::dir_digest_or_file(&work_a.join(entry)).unwrap(),
            io::dir_digest_or_file(&work_b.join(entry)).unwrap(),
            "artifact {entry} differs between identical runs"
        );
    }

    // Interrupting after iteration 1 and resuming is byte-identical too.
    let work_c = tmp.path().join("work_c");
    let mut cfg_c = pipeline_cfg(&work_c);
    cfg_c.stop_after = Some(1);
    let partial = pipeline::run_pipeline(&blurred, &manifest, &data_a, &cfg_c).unwrap();
    assert!(partial.final_grid.is_none());
    pipeline::resume_pipeline(&work_c).unwrap();
    for entry in ["initial", "iter_01", "iter_02", "grid.ckpt", "state.ckpt"] {
        assert_eq!(
            io::dir_digest_or_file(&work_a.join(entry)).unwrap(),
            io::dir_digest_or_file(&work_c.join(entry)).unwrap(),
            "artifact {entry} differs after checkpoint/resume"
        );
    }
    pass(11, "byte-identical runs and checkpoint/resume");
}
