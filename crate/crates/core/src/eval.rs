//! Full-reference metrics (PSNR, SSIM) and per-iteration run reports.
//!
//! By default metrics are computed in display-encoded sRGB to match common
//! reporting practice; linear-space evaluation is selectable. SSIM uses the
//! standard 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03, on BT.709
//! luma, valid windows only.

use crate::blursynth::srgb_encode;
use crate::error::{Error, Result};
use crate::image::LinearImage;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// PSNR is capped here: identical images report 99 dB instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Color space metrics are evaluated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpace {
    #[default]
    Display,
    Linear,
}

/// Peak signal-to-noise ratio over all RGB channels: 10·log10(peak²/MSE).
pub fn psnr(a: &LinearImage, b: &LinearImage, peak: f64) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "psnr: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let n = (a.pixels().len() * 3) as f64;
    let mse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (0..3).map(|c| (x[c] - y[c]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let mut w = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 - r;
            let dy = y as f64 - r;
            w[y * size + x] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean SSIM on luma over all valid 11×11 window positions (data range 1.0).
pub fn ssim(a: &LinearImage, b: &LinearImage) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch("ssim: image sizes differ".into()));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "ssim needs sides >= {SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let la = a.luma();
    let lb = b.luma();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;

    let mut acc = 0.0;
    let mut count = 0usize;
    for y0 in 0..=(h - SSIM_WINDOW) {
        for x0 in 0..=(w - SSIM_WINDOW) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let wt = win[wy * SSIM_WINDOW + wx];
                    mu_a += wt * la[(y0 + wy) * w + x0 + wx];
                    mu_b += wt * lb[(y0 + wy) * w + x0 + wx];
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let wt = win[wy * SSIM_WINDOW + wx];
                    let da = la[(y0 + wy) * w + x0 + wx] - mu_a;
                    let db = lb[(y0 + wy) * w + x0 + wx] - mu_b;
                    var_a += wt * da * da;
                    var_b += wt * db * db;
                    cov += wt * da * db;
                }
            }
            acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

fn encode_for_metrics(img: &LinearImage) -> LinearImage {
    img.map(|v| srgb_encode(v.clamp(0.0, 1.0)))
}

/// (PSNR dB, SSIM) of `a` against reference `b` in the requested space.
pub fn compare(a: &LinearImage, b: &LinearImage, space: MetricSpace) -> Result<(f64, f64)> {
    match space {
        MetricSpace::Linear => Ok((psnr(a, b, 1.0)?, ssim(a, b)?)),
        MetricSpace::Display => {
            let ea = encode_for_metrics(a);
            let eb = encode_for_metrics(b);
            Ok((psnr(&ea, &eb, 1.0)?, ssim(&ea, &eb)?))
        }
    }
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ViewMetric {
    pub view_id: u32,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    /// PSNR gain over the previous iteration (0 for the first row).
    pub delta_psnr_db: f64,
    pub views: Vec<ViewMetric>,
}

pub const REPORT_VERSION: u32 = 1;

/// Held-out metrics per pipeline iteration, in iteration order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub version: u32,
    pub metric_space: MetricSpace,
    pub iterations: Vec<IterationMetrics>,
}

impl MetricReport {
    pub fn from_iterations(
        space: MetricSpace,
        per_iter: Vec<(usize, Vec<ViewMetric>)>,
    ) -> MetricReport {
        let mut iterations = Vec::with_capacity(per_iter.len());
        let mut prev: Option<f64> = None;
        for (iteration, views) in per_iter {
            let n = views.len().max(1) as f64;
            let mean_psnr_db = views.iter().map(|v| v.psnr_db).sum::<f64>() / n;
            let mean_ssim = views.iter().map(|v| v.ssim).sum::<f64>() / n;
            iterations.push(IterationMetrics {
                iteration,
                mean_psnr_db,
                mean_ssim,
                delta_psnr_db: prev.map_or(0.0, |p| mean_psnr_db - p),
                views,
            });
            prev = Some(mean_psnr_db);
        }
        MetricReport {
            version: REPORT_VERSION,
            metric_space: space,
            iterations,
        }
    }

    /// Fixed-width text table (one row per iteration).
    pub fn render_text(&self) -> String {
        let mut s = String::from("iter    PSNR(dB)     SSIM    dPSNR(dB)\n");
        for it in &self.iterations {
            s.push_str(&format!(
                "{:>4}  {:>9.4}  {:>8.5}  {:>9.4}\n",
                it.iteration, it.mean_psnr_db, it.mean_ssim, it.delta_psnr_db
            ));
        }
        s
    }

    /// Columnar plot data (CSV): iteration, mean PSNR, mean SSIM, delta.
    pub fn render_csv(&self) -> String {
        let mut s = String::from("iteration,mean_psnr_db,mean_ssim,delta_psnr_db\n");
        for it in &self.iterations {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                it.iteration, it.mean_psnr_db, it.mean_ssim, it.delta_psnr_db
            ));
        }
        s
    }

    /// Write `report.toml`, `report.txt`, and `report.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        crate::io::write_toml(&dir.join("report.toml"), self)?;
        std::fs::write(dir.join("report.txt"), self.render_text())?;
        std::fs::write(dir.join("report.csv"), self.render_csv())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<MetricReport> {
        let report: MetricReport = crate::io::read_toml(&dir.join("report.toml"))?;
        if report.version != REPORT_VERSION {
            return Err(Error::format(
                dir.join("report.toml"),
                format!("unsupported report version {}", report.version),
            ));
        }
        Ok(report)
    }
}

/// Rebuild the per-iteration held-out metric table from a pipeline workdir
/// (renders under `iter_##/heldout/` compared against the dataset's
/// ground-truth novel views). Works on partial runs; errors if nothing has
/// been rendered yet.
pub fn iteration_report(workdir: &Path, space: MetricSpace) -> Result<MetricReport> {
    let run = crate::pipeline::RunRecord::load(workdir)?;
    let manifest = crate::blursynth::DatasetManifest::load(Path::new(&run.dataset_dir))?;
    let gt: Vec<(u32, LinearImage)> = manifest
        .novel_views
        .iter()
        .map(|rec| {
            let img = crate::io::read_pfm(&Path::new(&run.dataset_dir).join(&rec.sharp_pfm_path))?;
            Ok((rec.view_id, img))
        })
        .collect::<Result<_>>()?;

    let mut per_iter = Vec::new();
    for i in 1..=run.config.n_iterations {
        let dir = workdir.join(crate::pipeline::iter_dir_name(i)).join("heldout");
        if !dir.is_dir() {
            break; // partial run
        }
        let mut views = Vec::new();
        for (view_id, gt_img) in &gt {
            let path = dir.join(format!("view_{view_id:04}.pfm"));
            let render = crate::io::read_pfm(&path)?;
            let (psnr_db, ssim_v) = compare(&render, gt_img, space)?;
            views.push(ViewMetric {
                view_id: *view_id,
                psnr_db,
                ssim: ssim_v,
            });
        }
        per_iter.push((i, views));
    }
    if per_iter.is_empty() {
        return Err(Error::MissingFile(
            workdir.join("iter_01").join("heldout"),
        ));
    }
    Ok(MetricReport::from_iterations(space, per_iter))
}
