use rfdeblur_core::deblur::{convolve, estimate_kernel, DeblurConfig, Kernel};
use rfdeblur_core::image::LinearImage;
use rand::Rng;

fn textured_image(w: usize, h: usize, seed: u64) -> LinearImage {
    let mut rng = rfdeblur_core::rng::stream(seed, &[77]);
    let mut img = LinearImage::constant(w, h, [0.25, 0.3, 0.35]);
    let nrect: usize = std::env::var("NRECT").ok().and_then(|v| v.parse().ok()).unwrap_or(12);
    let maxsz: usize = std::env::var("MAXSZ").ok().and_then(|v| v.parse().ok()).unwrap_or(w / 3);
    for _ in 0..nrect {
        let x0 = rng.gen_range(0..w - 4);
        let y0 = rng.gen_range(0..h - 4);
        let bw = rng.gen_range(3..maxsz);
        let bh = rng.gen_range(3..maxsz);
        let color = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
        for y in y0..(y0 + bh).min(h) { for x in x0..(x0 + bw).min(w) { img.set(x, y, color); } }
    }
    img
}

#[test]
fn sweep() {
    let mut instances = Vec::new();
    for (i, &size) in [5usize, 7, 9, 11, 13].iter().enumerate() {
        let len = (size - 2) as f64;
        instances.push((size, Kernel::motion_line(size, len, 0.35 + i as f64 * 0.5).unwrap()));
        instances.push((size, Kernel::motion_line(size, len, 1.9 + i as f64 * 0.3).unwrap()));
        instances.push((size, Kernel::gaussian(size, 0.5 + 0.22 * i as f64).unwrap()));
        instances.push((size, Kernel::disc(size, 0.8 + 0.45 * i as f64).unwrap()));
    }
    for ridge in [1e-4] {
        let mut worst_clean: f64 = 0.0;
        let mut worst_noisy: f64 = 0.0;
        let dim: usize = std::env::var("DIM").ok().and_then(|v| v.parse().ok()).unwrap_or(96);
        for (i, (size, truth)) in instances.iter().enumerate() {
            let guide = textured_image(dim, dim, 600 + i as u64);
            let blurred = convolve(&guide, truth);
            let cfg = DeblurConfig { kernel_size: *size, estimation_stride: 1, ridge_lambda: ridge, ..Default::default() };
            let est = estimate_kernel(&blurred, &guide, &cfg).unwrap();
            worst_clean = worst_clean.max(est.l1_distance(truth));
            let mut noisy = blurred.clone();
            let mut rng = rfdeblur_core::rng::stream(700 + i as u64, &[1]);
            for p in noisy.pixels_mut() {
                for c in 0..3 {
                    p[c] = (p[c] + 0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal)).max(0.0);
                }
            }
            let est = estimate_kernel(&noisy, &guide, &cfg).unwrap();
            let l1 = est.l1_distance(truth);
            if l1 > 0.12 { println!("  inst {i:>2} size {size:>2}: noisy L1 {l1:.4}"); }
            worst_noisy = worst_noisy.max(l1);
        }
        println!("ridge {ridge:.0e}: worst clean {worst_clean:.4} worst noisy {worst_noisy:.4}");
    }
}
