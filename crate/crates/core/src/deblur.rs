//! Model-based deblurring operators behind a pluggable interface.
//!
//! The pipeline needs two capabilities: blind single-image deblurring of the
//! raw inputs, and guided deblurring of an input given a rendering of the
//! current radiance field at the same pose. Both are realized here with
//! classical operators — grid-search blind kernel selection scored by reblur
//! consistency plus a gradient-sparsity prior, least-squares kernel
//! estimation against the guide, Richardson–Lucy deconvolution, and a
//! closed-form guided Wiener-style deconvolution with a quadratic pull
//! toward the guide. Kernels are spatially uniform per image.

use crate::blursynth::decode_image;
use crate::error::{Error, Result};
use crate::image::{LinearImage, SrgbImage};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Kernel

/// 2D point-spread function: odd k×k support, nonnegative, unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    /// Build from raw weights, projecting onto the valid set (clamp negatives
    /// to zero, renormalize to unit sum). Projection is idempotent.
    pub fn from_weights(size: usize, weights: Vec<f64>) -> Result<Kernel> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::InvalidInput(format!(
                "kernel size must be odd, got {size}"
            )));
        }
        if weights.len() != size * size {
            return Err(Error::DimensionMismatch(format!(
                "kernel expects {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        let mut w: Vec<f64> = weights.iter().map(|&v| v.max(0.0)).collect();
        let sum: f64 = w.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::InvalidInput(
                "kernel weights must have positive finite sum".into(),
            ));
        }
        for v in &mut w {
            *v /= sum;
        }
        Ok(Kernel { size, weights: w })
    }

    pub fn delta(size: usize) -> Kernel {
        let mut w = vec![0.0; size * size];
        w[(size / 2) * size + size / 2] = 1.0;
        Kernel { size, weights: w }
    }

    /// Anti-aliased line kernel of the given length (pixels) and angle
    /// (radians, measured from the +x axis).
    pub fn motion_line(size: usize, length: f64, angle: f64) -> Result<Kernel> {
        let r = size / 2;
        let mut w = vec![0.0; size * size];
        let steps = (length.ceil() as usize * 8).max(1);
        let (dx, dy) = (angle.cos(), angle.sin());
        for s in 0..=steps {
            let t = (s as f64 / steps as f64 - 0.5) * (length - 1.0).max(0.0);
            let x = r as f64 + t * dx;
            let y = r as f64 + t * dy;
            // bilinear splat
            let x0 = x.floor();
            let y0 = y.floor();
            let fx = x - x0;
            let fy = y - y0;
            for (ix, iy, wt) in [
                (x0 as isize, y0 as isize, (1.0 - fx) * (1.0 - fy)),
                (x0 as isize + 1, y0 as isize, fx * (1.0 - fy)),
                (x0 as isize, y0 as isize + 1, (1.0 - fx) * fy),
                (x0 as isize + 1, y0 as isize + 1, fx * fy),
            ] {
                if ix >= 0 && iy >= 0 && (ix as usize) < size && (iy as usize) < size {
                    w[iy as usize * size + ix as usize] += wt;
                }
            }
        }
        Kernel::from_weights(size, w)
    }

    pub fn gaussian(size: usize, sigma: f64) -> Result<Kernel> {
        if sigma <= 0.0 {
            return Err(Error::InvalidInput("gaussian sigma must be > 0".into()));
        }
        let r = (size / 2) as f64;
        let mut w = vec![0.0; size * size];
        for y in 0..size {
            for x in 0..size {
                let dx = x as f64 - r;
                let dy = y as f64 - r;
                w[y * size + x] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
        }
        Kernel::from_weights(size, w)
    }

    /// Disc kernel with 4×4 supersampled edge coverage.
    pub fn disc(size: usize, radius: f64) -> Result<Kernel> {
        if radius <= 0.0 {
            return Err(Error::InvalidInput("disc radius must be > 0".into()));
        }
        let r = (size / 2) as f64;
        let mut w = vec![0.0; size * size];
        for y in 0..size {
            for x in 0..size {
                let mut cover = 0.0;
                for sy in 0..4 {
                    for sx in 0..4 {
                        let dx = x as f64 + (sx as f64 + 0.5) / 4.0 - 0.5 - r;
                        let dy = y as f64 + (sy as f64 + 0.5) / 4.0 - 0.5 - r;
                        if dx * dx + dy * dy <= radius * radius {
                            cover += 1.0;
                        }
                    }
                }
                w[y * size + x] = cover;
            }
        }
        Kernel::from_weights(size, w)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// 180° rotation (the adjoint of correlation).
    pub fn flipped(&self) -> Kernel {
        let mut w = self.weights.clone();
        w.reverse();
        Kernel {
            size: self.size,
            weights: w,
        }
    }

    /// L1 distance between kernels of equal size.
    pub fn l1_distance(&self, other: &Kernel) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn center_weight(&self) -> f64 {
        self.weights[(self.size / 2) * self.size + self.size / 2]
    }

    /// Write as a small text matrix for the run diagnostics directory.
    pub fn save_text(&self, path: &std::path::Path) -> Result<()> {
        let mut s = String::new();
        for y in 0..self.size {
            for x in 0..self.size {
                if x > 0 {
                    s.push(' ');
                }
                s.push_str(&format!("{:.8e}", self.weights[y * self.size + x]));
            }
            s.push('\n');
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BlindSearchGrid {
    pub motion_angles_deg: Vec<f64>,
    pub motion_lengths: Vec<f64>,
    pub gaussian_sigmas: Vec<f64>,
    pub disc_radii: Vec<f64>,
    /// Weight of the gradient-sparsity prior against reblur consistency.
    pub sparsity_weight: f64,
    /// Richardson–Lucy iterations used while scoring candidates.
    pub score_rl_iterations: usize,
}

impl Default for BlindSearchGrid {
    fn default() -> Self {
        BlindSearchGrid {
            motion_angles_deg: (0..8).map(|i| i as f64 * 22.5).collect(),
            motion_lengths: vec![5.0, 9.0, 13.0],
            gaussian_sigmas: vec![1.0, 2.0],
            disc_radii: vec![2.0, 3.0],
            sparsity_weight: 2e-4,
            score_rl_iterations: 12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DeblurConfig {
    /// Kernel support (odd).
    pub kernel_size: usize,
    /// Ridge regularizer for kernel estimation, relative to the mean
    /// diagonal of the normal equations.
    pub ridge_lambda: f64,
    /// Fidelity weight pulling the guided deconvolution toward the guide.
    pub guidance_mu: f64,
    /// Richardson–Lucy iterations for the final (non-scoring) deconvolution.
    pub rl_iterations: usize,
    pub blind_search_grid: BlindSearchGrid,
    /// Valid-region subsampling stride for kernel estimation (1 = use all).
    pub estimation_stride: usize,
}

impl Default for DeblurConfig {
    fn default() -> Self {
        DeblurConfig {
            kernel_size: 13,
            ridge_lambda: 1e-5,
            guidance_mu: 0.05,
            rl_iterations: 30,
            blind_search_grid: BlindSearchGrid::default(),
            estimation_stride: 2,
        }
    }
}

impl DeblurConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(Error::InvalidInput("kernel_size must be odd".into()));
        }
        if self.ridge_lambda < 0.0 || self.guidance_mu < 0.0 {
            return Err(Error::InvalidInput(
                "regularization weights must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Spatial correlation (replicate boundary)

fn correlate_plane(
    plane: &[f64],
    width: usize,
    height: usize,
    kernel: &Kernel,
    out: &mut [f64],
) {
    let r = kernel.radius() as isize;
    let k = kernel.size;
    let kw = kernel.weights();
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                let sy = (y + dy).clamp(0, height as isize - 1) as usize;
                let krow = &kw[((dy + r) as usize) * k..((dy + r) as usize) * k + k];
                for dx in -r..=r {
                    let sx = (x + dx).clamp(0, width as isize - 1) as usize;
                    acc += krow[(dx + r) as usize] * plane[sy * width + sx];
                }
            }
            out[y as usize * width + x as usize] = acc;
        }
    }
}

/// 2D correlation with the kernel center aligned; replicate-edge boundary.
/// Linear in the image.
pub fn convolve(img: &LinearImage, kernel: &Kernel) -> LinearImage {
    let (w, h) = (img.width(), img.height());
    let planes: Vec<Vec<f64>> = (0..3)
        .into_par_iter()
        .map(|c| {
            let plane = img.channel(c);
            let mut out = vec![0.0; w * h];
            correlate_plane(&plane, w, h, kernel, &mut out);
            out
        })
        .collect();
    let mut it = planes.into_iter();
    LinearImage::from_channels(w, h, [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
        .expect("planes sized from img")
}

// ---------------------------------------------------------------------------
// Kernel estimation (guide -> blurred), normal equations over valid pixels

fn forward_gradients(luma: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; width * height];
    let mut gy = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let v = luma[y * width + x];
            if x + 1 < width {
                gx[y * width + x] = luma[y * width + x + 1] - v;
            }
            if y + 1 < height {
                gy[y * width + x] = luma[(y + 1) * width + x] - v;
            }
        }
    }
    (gx, gy)
}

/// Estimate the uniform kernel k minimizing
/// `‖k ⊛ guide − blurred‖² + ridge·‖k‖²` over the k×k support, then project
/// onto the nonnegative unit-sum set.
///
/// The least squares is solved on the gradient planes of all three channels
/// (the system is the same because differentiation commutes with
/// correlation): smooth regions then contribute nothing instead of leaving
/// the fit free to spread weight across taps, and the channels' independent
/// noise averages out. Valid interior only (every kernel tap in bounds),
/// rows subsampled by `cfg.estimation_stride`.
pub fn estimate_kernel(
    blurred: &LinearImage,
    guide: &LinearImage,
    cfg: &DeblurConfig,
) -> Result<Kernel> {
    cfg.validate()?;
    if !blurred.same_dims(guide) {
        return Err(Error::DimensionMismatch(
            "blurred and guide must have equal dimensions".into(),
        ));
    }
    let k = cfg.kernel_size;
    let r = k / 2;
    let (w, h) = (guide.width(), guide.height());
    if w < 2 * k || h < 2 * k {
        return Err(Error::InvalidInput(format!(
            "image {w}x{h} too small for kernel size {k}"
        )));
    }

    let stride = cfg.estimation_stride.max(1);
    // gradient plane value at (x, y) uses (x+1, y+1), so shrink the far edge
    let xs: Vec<usize> = (r..w - r - 1).step_by(stride).collect();
    let ys: Vec<usize> = (r..h - r - 1).step_by(stride).collect();
    let n_k = k * k;

    // Accumulate the normal equations in bands to bound memory: per channel,
    // two rows per sampled pixel (∂x and ∂y), with
    // A[p, (dy,dx)] = ∇guide(y+dy−r, x+dx−r).
    let mut ata = DMatrix::<f64>::zeros(n_k, n_k);
    let mut atb = DVector::<f64>::zeros(n_k);
    let mut grad_energy = 0.0;
    let band_rows = 4096usize;
    let mut a = DMatrix::<f64>::zeros(band_rows, n_k);
    let mut rhs = DVector::<f64>::zeros(band_rows);
    let mut row = 0usize;
    let mut flush = |a: &mut DMatrix<f64>,
                     rhs: &mut DVector<f64>,
                     row: &mut usize,
                     ata: &mut DMatrix<f64>,
                     atb: &mut DVector<f64>| {
        if *row == 0 {
            return;
        }
        let block = a.rows(0, *row);
        *ata += block.transpose() * block;
        *atb += block.transpose() * rhs.rows(0, *row);
        *row = 0;
    };
    for c in 0..3 {
        let g = guide.channel(c);
        let b = blurred.channel(c);
        let (ggx, ggy) = forward_gradients(&g, w, h);
        let (bgx, bgy) = forward_gradients(&b, w, h);
        grad_energy +=
            ggx.iter().zip(&ggy).map(|(a, b)| a * a + b * b).sum::<f64>() / (3 * w * h) as f64;
        for &y in &ys {
            for &x in &xs {
                for (gplane, bplane) in [(&ggx, &bgx), (&ggy, &bgy)] {
                    for dy in 0..k {
                        let sy = y + dy - r;
                        for dx in 0..k {
                            let sx = x + dx - r;
                            a[(row, dy * k + dx)] = gplane[sy * w + sx];
                        }
                    }
                    rhs[row] = bplane[y * w + x];
                    row += 1;
                    if row == band_rows {
                        flush(&mut a, &mut rhs, &mut row, &mut ata, &mut atb);
                    }
                }
            }
        }
    }
    flush(&mut a, &mut rhs, &mut row, &mut ata, &mut atb);

    // Reject guides without usable gradient energy (rank-deficient system).
    if grad_energy < 1e-12 {
        return Err(Error::DegenerateGuide(format!(
            "guide gradient energy {grad_energy:.3e} below 1e-12"
        )));
    }
    let mean_diag = ata.diagonal().mean();
    let ridge = cfg.ridge_lambda * mean_diag.max(1e-30);
    for i in 0..n_k {
        ata[(i, i)] += ridge;
    }
    let chol = ata.clone().cholesky().ok_or_else(|| {
        Error::DegenerateGuide("normal equations not positive definite".into())
    })?;
    let sol = chol.solve(&atb);
    let projected = Kernel::from_weights(k, sol.as_slice().to_vec())?;

    // Projection can land far from the feasible optimum when the guide is
    // softer than the input (the unconstrained solution is a sharpening
    // kernel with negative lobes). Keep the projected kernel only if it fits
    // the data at least as well as the identity; residuals come from the
    // normal matrices: r(k) = kᵀAᵀA k − 2 kᵀAᵀb + const.
    let fit = |kernel: &Kernel| -> f64 {
        let kv = DVector::from_column_slice(kernel.weights());
        (kv.transpose() * &ata * &kv)[(0, 0)] - 2.0 * kv.dot(&atb)
    };
    let delta = Kernel::delta(k);
    if fit(&delta) < fit(&projected) {
        Ok(delta)
    } else {
        Ok(projected)
    }
}

// ---------------------------------------------------------------------------
// Richardson–Lucy

const RL_EPS: f64 = 1e-8;

/// Richardson–Lucy deconvolution: multiplicative updates
/// `D ← D · (k̃ ⊛ (B / (k ⊛ D + ε)))` starting from D⁰ = B.
/// Output stays nonnegative for nonnegative input.
pub fn deconv_rl(blurred: &LinearImage, kernel: &Kernel, iterations: usize) -> LinearImage {
    let (w, h) = (blurred.width(), blurred.height());
    let flipped = kernel.flipped();
    let planes: Vec<Vec<f64>> = (0..3)
        .into_par_iter()
        .map(|c| {
            let b = blurred.channel(c);
            let mut d: Vec<f64> = b.iter().map(|&v| v.max(0.0)).collect();
            let mut reblur = vec![0.0; w * h];
            let mut ratio = vec![0.0; w * h];
            let mut corr = vec![0.0; w * h];
            for _ in 0..iterations {
                correlate_plane(&d, w, h, kernel, &mut reblur);
                for i in 0..w * h {
                    ratio[i] = b[i].max(0.0) / (reblur[i] + RL_EPS);
                }
                correlate_plane(&ratio, w, h, &flipped, &mut corr);
                for i in 0..w * h {
                    d[i] *= corr[i];
                }
            }
            d
        })
        .collect();
    let mut it = planes.into_iter();
    LinearImage::from_channels(w, h, [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
        .expect("planes sized from img")
}

// ---------------------------------------------------------------------------
// Guided deconvolution (frequency domain)

struct Fft2d {
    width: usize,
    height: usize,
    fwd_w: std::sync::Arc<dyn rustfft::Fft<f64>>,
    fwd_h: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv_w: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv_h: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Fft2d {
    fn new(width: usize, height: usize) -> Fft2d {
        let mut planner = FftPlanner::new();
        Fft2d {
            width,
            height,
            fwd_w: planner.plan_fft_forward(width),
            fwd_h: planner.plan_fft_forward(height),
            inv_w: planner.plan_fft_inverse(width),
            inv_h: planner.plan_fft_inverse(height),
        }
    }

    fn forward(&self, data: &mut [Complex64]) {
        for row in data.chunks_exact_mut(self.width) {
            self.fwd_w.process(row);
        }
        let mut col = vec![Complex64::default(); self.height];
        for x in 0..self.width {
            for y in 0..self.height {
                col[y] = data[y * self.width + x];
            }
            self.fwd_h.process(&mut col);
            for y in 0..self.height {
                data[y * self.width + x] = col[y];
            }
        }
    }

    fn inverse(&self, data: &mut [Complex64]) {
        for row in data.chunks_exact_mut(self.width) {
            self.inv_w.process(row);
        }
        let mut col = vec![Complex64::default(); self.height];
        for x in 0..self.width {
            for y in 0..self.height {
                col[y] = data[y * self.width + x];
            }
            self.inv_h.process(&mut col);
            for y in 0..self.height {
                data[y * self.width + x] = col[y];
            }
        }
        let scale = 1.0 / (self.width * self.height) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

fn to_complex(plane: &[f64]) -> Vec<Complex64> {
    plane.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Transfer function of circular correlation with `kernel` on a W×H domain:
/// corr(g, k) = IFFT(FFT(g) · H). Correlation is convolution with the
/// flipped kernel, so H is the FFT of the flipped kernel embedded with its
/// center at the origin (wrapped).
fn kernel_transfer(kernel: &Kernel, width: usize, height: usize, fft: &Fft2d) -> Vec<Complex64> {
    let k = kernel.size();
    let r = kernel.radius() as isize;
    let flipped = kernel.flipped();
    let mut grid = vec![Complex64::default(); width * height];
    for dy in 0..k as isize {
        for dx in 0..k as isize {
            let y = (dy - r).rem_euclid(height as isize) as usize;
            let x = (dx - r).rem_euclid(width as isize) as usize;
            grid[y * width + x] += Complex64::new(flipped.weights()[dy as usize * k + dx as usize], 0.0);
        }
    }
    fft.forward(&mut grid);
    grid
}

/// Circular correlation of an image with a kernel (the blur model used by
/// the frequency-domain objective).
pub fn convolve_circular(img: &LinearImage, kernel: &Kernel) -> LinearImage {
    let (w, h) = (img.width(), img.height());
    let fft = Fft2d::new(w, h);
    let transfer = kernel_transfer(kernel, w, h, &fft);
    let planes: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let mut buf = to_complex(&img.channel(c));
            fft.forward(&mut buf);
            for (v, t) in buf.iter_mut().zip(&transfer) {
                *v *= t;
            }
            fft.inverse(&mut buf);
            buf.iter().map(|z| z.re).collect()
        })
        .collect();
    let mut it = planes.into_iter();
    LinearImage::from_channels(w, h, [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
        .expect("planes sized from img")
}

/// Value of the guided-deconvolution objective
/// `‖k ⊛ d − blurred‖² + mu·‖d − guide‖²` under the circular blur model.
pub fn guided_objective(
    d: &LinearImage,
    blurred: &LinearImage,
    kernel: &Kernel,
    guide: &LinearImage,
    mu: f64,
) -> f64 {
    let reblur = convolve_circular(d, kernel);
    let mut obj = 0.0;
    for i in 0..d.pixels().len() {
        for c in 0..3 {
            let r = reblur.pixels()[i][c] - blurred.pixels()[i][c];
            let p = d.pixels()[i][c] - guide.pixels()[i][c];
            obj += r * r + mu * p * p;
        }
    }
    obj
}

/// Exact per-frequency minimizer of the circular guided objective
/// (no padding, no clamping): `D̂ = (conj(Ĥ)·B̂ + mu·Ĝ) / (|Ĥ|² + mu)`.
pub fn deconv_guided_circular(
    blurred: &LinearImage,
    kernel: &Kernel,
    guide: &LinearImage,
    mu: f64,
) -> Result<LinearImage> {
    if !blurred.same_dims(guide) {
        return Err(Error::DimensionMismatch(
            "blurred and guide must have equal dimensions".into(),
        ));
    }
    let (w, h) = (blurred.width(), blurred.height());
    let fft = Fft2d::new(w, h);
    let transfer = kernel_transfer(kernel, w, h, &fft);

    let mut mu_eff = mu;
    if mu == 0.0 {
        let min_mag = transfer.iter().map(|t| t.norm_sqr()).fold(f64::INFINITY, f64::min);
        if min_mag < 1e-12 {
            log::warn!(
                "guided deconvolution with mu=0 and near-zero kernel frequencies; applying 1e-8 floor"
            );
            mu_eff = 1e-8;
        }
    }

    let planes: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let mut bf = to_complex(&blurred.channel(c));
            let mut gf = to_complex(&guide.channel(c));
            fft.forward(&mut bf);
            fft.forward(&mut gf);
            for i in 0..bf.len() {
                let t = transfer[i];
                bf[i] = (t.conj() * bf[i] + gf[i] * mu_eff) / (t.norm_sqr() + mu_eff);
            }
            fft.inverse(&mut bf);
            bf.iter().map(|z| z.re).collect()
        })
        .collect();
    let mut it = planes.into_iter();
    LinearImage::from_channels(w, h, [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// Append a smooth bridge strip on the right/bottom so the domain becomes
/// periodic without a wrap discontinuity (edge taper for the circular solve).
fn periodize(img: &LinearImage, pad: usize) -> LinearImage {
    let (w, h) = (img.width(), img.height());
    let (pw, ph) = (w + pad, h + pad);
    let mut out = LinearImage::new(pw, ph);
    for y in 0..ph {
        for x in 0..pw {
            let px = if x < w && y < h {
                img.get(x, y)
            } else {
                // cosine crossfade from the far edge back to the near edge
                let blend = |i: usize, n: usize| -> (usize, usize, f64) {
                    if i < n {
                        (i, i, 0.0)
                    } else {
                        let t = (i - n + 1) as f64 / (pad + 1) as f64;
                        let s = 0.5 * (1.0 - (std::f64::consts::PI * t).cos());
                        (n - 1, 0, s)
                    }
                };
                let (x0, x1, sx) = blend(x, w);
                let (y0, y1, sy) = blend(y, h);
                let mut v = [0.0; 3];
                for c in 0..3 {
                    let v00 = img.get(x0, y0)[c];
                    let v10 = img.get(x1, y0)[c];
                    let v01 = img.get(x0, y1)[c];
                    let v11 = img.get(x1, y1)[c];
                    v[c] = v00 * (1.0 - sx) * (1.0 - sy)
                        + v10 * sx * (1.0 - sy)
                        + v01 * (1.0 - sx) * sy
                        + v11 * sx * sy;
                }
                v
            };
            out.set(x, y, px);
        }
    }
    out
}

fn crop(img: &LinearImage, w: usize, h: usize) -> LinearImage {
    let mut out = LinearImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, img.get(x, y));
        }
    }
    out
}

/// Guided deconvolution: per-channel minimizer of
/// `‖k ⊛ D − B‖² + mu·‖D − guide‖²`, solved per frequency on an
/// edge-tapered circular domain, cropped back and clamped at 0.
pub fn deconv_guided(
    blurred: &LinearImage,
    kernel: &Kernel,
    guide: &LinearImage,
    mu: f64,
) -> Result<LinearImage> {
    if !blurred.same_dims(guide) {
        return Err(Error::DimensionMismatch(
            "blurred and guide must have equal dimensions".into(),
        ));
    }
    let (w, h) = (blurred.width(), blurred.height());
    let pad = (2 * kernel.radius()).max(4);
    let b = periodize(blurred, pad);
    let g = periodize(guide, pad);
    let solved = deconv_guided_circular(&b, kernel, &g, mu)?;
    Ok(crop(&solved, w, h).map(|v| v.max(0.0)))
}

// ---------------------------------------------------------------------------
// Blind initial deblurring

/// Gradient magnitudes below this are treated as noise (8-bit inputs carry
/// ~1/255 quantization noise, which deconvolution amplifies into a dense
/// low-amplitude texture that would otherwise swamp the sparsity measure).
const SPARSITY_NOISE_FLOOR: f64 = 0.02;

/// Gradient-sparsity prior: the 0.8-power sum of gradient magnitudes on the
/// l2-normalized gradient field, ignoring sub-floor magnitudes. The plain
/// (unnormalized) 0.8-power sum decreases under blur, so it cannot rank a
/// deblurred candidate above the blurred input; dividing by ‖∇D‖₂^0.8 makes
/// the measure scale-free and restores the intended preference for images
/// whose gradient mass sits in few large values.
fn gradient_sparsity(luma: &[f64], width: usize, height: usize) -> f64 {
    let mut acc = 0.0;
    let mut l2 = 0.0;
    for y in 1..height {
        for x in 1..width {
            let v = luma[y * width + x];
            let gx = (v - luma[y * width + x - 1]).abs();
            let gy = (v - luma[(y - 1) * width + x]).abs();
            l2 += gx * gx + gy * gy;
            if gx > SPARSITY_NOISE_FLOOR {
                acc += gx.powf(0.8);
            }
            if gy > SPARSITY_NOISE_FLOOR {
                acc += gy.powf(0.8);
            }
        }
    }
    acc / l2.sqrt().powf(0.8).max(1e-12)
}

fn candidate_kernels(cfg: &DeblurConfig) -> Vec<Kernel> {
    let grid = &cfg.blind_search_grid;
    let k = cfg.kernel_size;
    let mut out = vec![Kernel::delta(k)];
    for &len in &grid.motion_lengths {
        for &angle in &grid.motion_angles_deg {
            if let Ok(kr) = Kernel::motion_line(k, len, angle.to_radians()) {
                out.push(kr);
            }
        }
    }
    for &sigma in &grid.gaussian_sigmas {
        if let Ok(kr) = Kernel::gaussian(k, sigma) {
            out.push(kr);
        }
    }
    for &radius in &grid.disc_radii {
        if let Ok(kr) = Kernel::disc(k, radius) {
            out.push(kr);
        }
    }
    out
}

fn blind_score(
    blurred: &LinearImage,
    kernel: &Kernel,
    cfg: &DeblurConfig,
) -> (f64, f64, f64) {
    // Deconvolve with the candidate (full color: the luma of the per-channel
    // result averages out amplified quantization noise), reblur, and score:
    // reblur consistency + sparsity_weight * gradient sparsity.
    let d = if kernel.center_weight() == 1.0 {
        blurred.clone()
    } else {
        deconv_rl(blurred, kernel, cfg.blind_search_grid.score_rl_iterations)
    };
    let reblur = convolve(&d, kernel);
    let n = (blurred.pixels().len() * 3) as f64;
    let mse: f64 = reblur
        .pixels()
        .iter()
        .zip(blurred.pixels())
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    let sparsity = gradient_sparsity(&d.luma(), blurred.width(), blurred.height());
    (
        mse + cfg.blind_search_grid.sparsity_weight * sparsity,
        mse,
        sparsity,
    )
}

/// Result of the blind search: the selected kernel alongside the deblurred
/// image, for diagnostics.
pub struct BlindDeblurResult {
    pub image: LinearImage,
    pub kernel: Kernel,
}

/// Candidate labels and score decomposition for the blind search; exposed
/// for calibration and diagnostics.
#[doc(hidden)]
pub fn debug_blind_scores(
    blurred: &SrgbImage,
    cfg: &DeblurConfig,
) -> Result<Vec<(String, f64, f64, f64)>> {
    cfg.validate()?;
    let linear = decode_image(blurred);
    let grid = &cfg.blind_search_grid;
    let mut labeled: Vec<(String, Kernel)> = vec![("delta".into(), Kernel::delta(cfg.kernel_size))];
    for &len in &grid.motion_lengths {
        for &angle in &grid.motion_angles_deg {
            labeled.push((
                format!("motion[{len}px @ {angle}deg]"),
                Kernel::motion_line(cfg.kernel_size, len, angle.to_radians())?,
            ));
        }
    }
    for &sigma in &grid.gaussian_sigmas {
        labeled.push((format!("gauss[{sigma}]"), Kernel::gaussian(cfg.kernel_size, sigma)?));
    }
    for &radius in &grid.disc_radii {
        labeled.push((format!("disc[{radius}]"), Kernel::disc(cfg.kernel_size, radius)?));
    }
    Ok(labeled
        .into_par_iter()
        .map(|(label, k)| {
            let (score, mse, sparsity) = blind_score(&linear, &k, cfg);
            (label, score, mse, sparsity)
        })
        .collect())
}

/// Blind-lite initial deblurring: grid search over parametric kernel
/// families, each scored by reblur consistency plus a gradient-sparsity
/// prior on the deconvolved luma; the best candidate's full-color
/// Richardson–Lucy deconvolution is returned. A sharp input selects the
/// delta kernel (identity).
pub fn initial_deblur_with_kernel(
    blurred: &SrgbImage,
    cfg: &DeblurConfig,
) -> Result<BlindDeblurResult> {
    cfg.validate()?;
    let linear = decode_image(blurred);
    let candidates = candidate_kernels(cfg);

    let scored: Vec<(f64, usize)> = candidates
        .par_iter()
        .enumerate()
        .map(|(i, k)| (blind_score(&linear, k, cfg).0, i))
        .collect();
    let (_, best_idx) = scored
        .iter()
        .copied()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("candidate list is never empty");
    let best = candidates[best_idx].clone();

    let image = if best.center_weight() == 1.0 {
        // Delta kernel: deconvolution is the identity.
        linear
    } else {
        deconv_rl(&linear, &best, cfg.rl_iterations)
    };
    Ok(BlindDeblurResult {
        image,
        kernel: best,
    })
}

/// See [`initial_deblur_with_kernel`]; this is the plain-image entry point.
pub fn initial_deblur(blurred: &SrgbImage, cfg: &DeblurConfig) -> Result<LinearImage> {
    Ok(initial_deblur_with_kernel(blurred, cfg)?.image)
}

/// RF-guided deblurring result with the estimated kernel for diagnostics.
pub struct GuidedDeblurResult {
    pub image: LinearImage,
    /// None when kernel estimation failed and the guide was returned as-is.
    pub kernel: Option<Kernel>,
}

/// Guided deblurring of an input view against a rendering of the current
/// radiance field at the same pose: estimate the kernel mapping the guide to
/// the blurred input, then run the guided deconvolution. If estimation fails
/// (degenerate guide), the guide itself is returned and the failure logged.
pub fn rf_guided_deblur_with_kernel(
    blurred: &SrgbImage,
    rendered_guide: &LinearImage,
    cfg: &DeblurConfig,
) -> Result<GuidedDeblurResult> {
    let linear = decode_image(blurred);
    if !linear.same_dims(rendered_guide) {
        return Err(Error::DimensionMismatch(
            "blurred input and rendered guide must have equal dimensions".into(),
        ));
    }
    match estimate_kernel(&linear, rendered_guide, cfg) {
        Ok(kernel) => {
            let image = deconv_guided(&linear, &kernel, rendered_guide, cfg.guidance_mu)?;
            Ok(GuidedDeblurResult {
                image,
                kernel: Some(kernel),
            })
        }
        Err(Error::DegenerateGuide(msg)) => {
            log::warn!("kernel estimation failed ({msg}); falling back to the rendered guide");
            Ok(GuidedDeblurResult {
                image: rendered_guide.clone(),
                kernel: None,
            })
        }
        Err(e) => Err(e),
    }
}

/// See [`rf_guided_deblur_with_kernel`]; plain-image entry point.
pub fn rf_guided_deblur(
    blurred: &SrgbImage,
    rendered_guide: &LinearImage,
    cfg: &DeblurConfig,
) -> Result<LinearImage> {
    Ok(rf_guided_deblur_with_kernel(blurred, rendered_guide, cfg)?.image)
}

// ---------------------------------------------------------------------------
// Operator interface

/// The two deblurring capabilities the pipeline needs. The model-based
/// implementation lives here; a learned implementation can plug in behind
/// the same interface.
pub trait DeblurOperator: Send + Sync {
    /// Blind single-image deblurring of a raw input view.
    fn initial(&self, blurred: &SrgbImage) -> Result<LinearImage>;

    /// Deblur an input view using a same-pose rendering as guidance.
    fn guided(&self, blurred: &SrgbImage, rendered_guide: &LinearImage) -> Result<LinearImage>;
}

/// The classical-operator implementation parameterized by [`DeblurConfig`].
#[derive(Debug, Clone, Default)]
pub struct ModelBasedDeblur {
    pub config: DeblurConfig,
}

impl ModelBasedDeblur {
    pub fn new(config: DeblurConfig) -> Self {
        ModelBasedDeblur { config }
    }
}

impl DeblurOperator for ModelBasedDeblur {
    fn initial(&self, blurred: &SrgbImage) -> Result<LinearImage> {
        initial_deblur(blurred, &self.config)
    }

    fn guided(&self, blurred: &SrgbImage, rendered_guide: &LinearImage) -> Result<LinearImage> {
        rf_guided_deblur(blurred, rendered_guide, &self.config)
    }
}
