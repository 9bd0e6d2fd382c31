//! Synthetic blur dataset generation with realistic degradation.
//!
//! Camera-motion blur is the per-pixel mean of pinhole renders along a
//! sampled exposure trajectory; defocus blur comes from thin-lens rendering.
//! Both happen in linear sRGB. Degradation then clips highlights, maps to
//! camera RAW (inverse CCM, inverse white balance), adds signal-dependent
//! shot noise plus read noise, maps back, and display-encodes to 8-bit.
//!
//! All per-view randomness is keyed by (dataset seed, view id), so view
//! generation parallelizes without affecting any output byte.

use crate::error::{Error, Result};
use crate::geometry::{self, Camera, Pose, Trajectory};
use crate::image::{LinearImage, SrgbImage};
use crate::io;
use crate::rng::{self, derive_seed, phase};
use crate::scene::{self, LensConfig, Scene};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

// ---------------------------------------------------------------------------
// sRGB transfer

/// Piecewise sRGB transfer, linear -> display, for x in [0, 1].
pub fn srgb_encode(x: f64) -> f64 {
    if x <= 0.003_130_8 {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

/// Inverse transfer, display -> linear, for v in [0, 1].
pub fn srgb_decode(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Clip to [0, 1], encode, and quantize to 8 bits with round-half-up.
pub fn encode_image(img: &LinearImage) -> SrgbImage {
    let mut out = SrgbImage::new(img.width(), img.height());
    for (o, p) in out.pixels_mut().iter_mut().zip(img.pixels()) {
        for c in 0..3 {
            let v = srgb_encode(p[c].clamp(0.0, 1.0));
            o[c] = (v * 255.0 + 0.5).floor().min(255.0) as u8;
        }
    }
    out
}

pub fn decode_image(img: &SrgbImage) -> LinearImage {
    let mut out = LinearImage::new(img.width(), img.height());
    for (o, p) in out.pixels_mut().iter_mut().zip(img.pixels()) {
        for c in 0..3 {
            o[c] = srgb_decode(p[c] as f64 / 255.0);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Degradation

/// Camera degradation model parameters. Defaults stand in for unpublished
/// camera calibration values: identity CCM, unit white balance, and a mild
/// Poisson-Gaussian noise floor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DegradationParams {
    /// Shot-noise variance slope in linear RAW units (variance = alpha * signal).
    pub shot_alpha: f64,
    /// Read-noise standard deviation in linear RAW units.
    pub read_sigma: f64,
    /// Row-major 3×3 color correction matrix (camera RAW -> linear sRGB).
    pub ccm: [[f64; 3]; 3],
    /// Per-channel white-balance gains.
    pub wb_gains: [f64; 3],
    /// Linear clip level applied after blur averaging (saturated highlights).
    pub saturation_clip: f64,
    pub rng_seed: u64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        DegradationParams {
            shot_alpha: 4e-4,
            read_sigma: 1e-3,
            ccm: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            wb_gains: [1.0, 1.0, 1.0],
            saturation_clip: 1.0,
            rng_seed: 0,
        }
    }
}

impl DegradationParams {
    pub fn noiseless(mut self) -> Self {
        self.shot_alpha = 0.0;
        self.read_sigma = 0.0;
        self
    }

    pub fn validate(&self) -> Result<Matrix3<f64>> {
        if self.shot_alpha < 0.0 || self.read_sigma < 0.0 {
            return Err(Error::InvalidInput(
                "noise parameters must be nonnegative".into(),
            ));
        }
        if self.wb_gains.iter().any(|&g| g <= 0.0) {
            return Err(Error::InvalidInput("wb gains must be positive".into()));
        }
        let ccm = Matrix3::from_row_slice(&[
            self.ccm[0][0],
            self.ccm[0][1],
            self.ccm[0][2],
            self.ccm[1][0],
            self.ccm[1][1],
            self.ccm[1][2],
            self.ccm[2][0],
            self.ccm[2][1],
            self.ccm[2][2],
        ]);
        let svd = ccm.svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 0.0 && smax / smin < 1e6) {
            return Err(Error::InvalidInput(
                "ccm must be invertible (condition number < 1e6)".into(),
            ));
        }
        Ok(ccm)
    }
}

/// Degradation through the RAW noise stage, returned in linear sRGB without
/// the final display clip/encode. `apply_degradation` is this plus encoding;
/// tests audit the noise statistics on this output.
pub fn degrade_linear(img: &LinearImage, p: &DegradationParams) -> Result<LinearImage> {
    let ccm = p.validate()?;
    let ccm_inv = ccm.try_inverse().expect("validated invertible");
    let wb = Vector3::from(p.wb_gains);
    let mut rng = rng::stream(p.rng_seed, &[phase::DEGRADATION]);
    let noisy = p.shot_alpha > 0.0 || p.read_sigma > 0.0;

    let mut out = LinearImage::new(img.width(), img.height());
    for (o, px) in out.pixels_mut().iter_mut().zip(img.pixels()) {
        // 1. saturate highlights after blur averaging
        let clipped = Vector3::new(
            px[0].max(0.0).min(p.saturation_clip),
            px[1].max(0.0).min(p.saturation_clip),
            px[2].max(0.0).min(p.saturation_clip),
        );
        // 2. linear sRGB -> camera RAW
        let mut raw = ccm_inv * clipped;
        raw.component_div_assign(&wb);
        // 3. heteroscedastic Gaussian approximation of Poisson-Gaussian noise
        if noisy {
            for c in 0..3 {
                let var = p.shot_alpha * raw[c].max(0.0) + p.read_sigma * p.read_sigma;
                let n: f64 = rng.sample(StandardNormal);
                raw[c] += var.sqrt() * n;
            }
        }
        // 4. back to linear sRGB
        let rgb = ccm * raw.component_mul(&wb);
        *o = [rgb.x, rgb.y, rgb.z];
    }
    Ok(out)
}

/// Full degradation: RAW-space noise, then clip to [0,1], sRGB-encode, and
/// quantize to 8 bits. Deterministic given `p.rng_seed`.
pub fn apply_degradation(img: &LinearImage, p: &DegradationParams) -> Result<SrgbImage> {
    Ok(encode_image(&degrade_linear(img, p)?))
}

// ---------------------------------------------------------------------------
// Blur synthesis

/// Ground-truth frame index (0-based) for an n-frame exposure: the temporally
/// central frame, ⌈n/2⌉ in 1-based counting (frame 26 of 51).
pub fn central_frame_index(n_frames: usize) -> usize {
    (n_frames + 1) / 2 - 1
}

/// Camera-motion blur: mean of `n_frames` pinhole renders along the
/// trajectory, plus the central frame as sharp ground truth.
///
/// The mean is computed as `f0 + mean(fi - f0)`, which is bit-exact for a
/// constant trajectory (all deltas are exactly zero).
pub fn synth_motion_blur(
    scene: &Scene,
    camera: &Camera,
    traj: &Trajectory,
    n_frames: usize,
) -> Result<(LinearImage, LinearImage)> {
    if n_frames == 0 {
        return Err(Error::InvalidInput("n_frames must be >= 1".into()));
    }
    if n_frames == 1 {
        let pose = geometry::bezier_pose(traj, 0.0)?;
        let frame = scene::render_pinhole(scene, camera, &pose);
        return Ok((frame.clone(), frame));
    }
    let poses = geometry::sample_trajectory(traj, n_frames)?;
    let gt_index = central_frame_index(n_frames);

    let first = scene::render_pinhole(scene, camera, &poses[0]);
    let mut gt = first.clone();
    let mut delta_sum = vec![[0.0f64; 3]; first.pixels().len()];
    for (k, pose) in poses.iter().enumerate().skip(1) {
        let frame = scene::render_pinhole(scene, camera, pose);
        for (acc, (f, f0)) in delta_sum
            .iter_mut()
            .zip(frame.pixels().iter().zip(first.pixels()))
        {
            for c in 0..3 {
                acc[c] += f[c] - f0[c];
            }
        }
        if k == gt_index {
            gt = frame;
        }
    }
    let inv_n = 1.0 / n_frames as f64;
    let mut blurred = first;
    for (b, acc) in blurred.pixels_mut().iter_mut().zip(&delta_sum) {
        for c in 0..3 {
            b[c] += acc[c] * inv_n;
        }
    }
    Ok((blurred, gt))
}

/// Defocus blur: thin-lens render paired with the pinhole render at the same
/// pose as ground truth.
pub fn synth_defocus(
    scene: &Scene,
    camera: &Camera,
    pose: &Pose,
    lens: &LensConfig,
    samples_per_pixel: usize,
    seed: u64,
) -> Result<(LinearImage, LinearImage)> {
    let blurred = scene::render_thin_lens(scene, camera, pose, lens, samples_per_pixel, seed)?;
    let sharp = scene::render_pinhole(scene, camera, pose);
    Ok((blurred, sharp))
}

// ---------------------------------------------------------------------------
// Dataset generation

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BlurConfig {
    Motion {
        /// Max control-pose translation offset (scene units).
        translation_mag: f64,
        /// Max control-pose rotation offset (radians).
        rotation_mag: f64,
        #[serde(default = "default_n_controls")]
        n_controls: usize,
        #[serde(default = "default_n_frames")]
        n_frames: usize,
        /// All views share one blur direction; only its length varies.
        #[serde(default)]
        same_direction: bool,
    },
    Defocus {
        aperture_radius: f64,
        /// Focal distance sampled from this interval × median scene depth.
        #[serde(default = "default_focal_range")]
        focal_range_rel: [f64; 2],
        #[serde(default = "default_spp")]
        samples_per_pixel: usize,
    },
}

fn default_n_controls() -> usize {
    4
}
fn default_n_frames() -> usize {
    51
}
fn default_focal_range() -> [f64; 2] {
    [0.5, 1.5]
}
fn default_spp() -> usize {
    128
}

impl BlurConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            BlurConfig::Motion { .. } => "motion",
            BlurConfig::Defocus { .. } => "defocus",
        }
    }
}

/// Noise/CCM knobs as they appear in config files (per-view RNG seeds are
/// derived from the dataset seed, not configured).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationConfig {
    pub shot_alpha: f64,
    pub read_sigma: f64,
    pub ccm: [[f64; 3]; 3],
    pub wb_gains: [f64; 3],
    pub saturation_clip: f64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        let d = DegradationParams::default();
        DegradationConfig {
            shot_alpha: d.shot_alpha,
            read_sigma: d.read_sigma,
            ccm: d.ccm,
            wb_gains: d.wb_gains,
            saturation_clip: d.saturation_clip,
        }
    }
}

impl DegradationConfig {
    pub fn params(&self, rng_seed: u64) -> DegradationParams {
        DegradationParams {
            shot_alpha: self.shot_alpha,
            read_sigma: self.read_sigma,
            ccm: self.ccm,
            wb_gains: self.wb_gains,
            saturation_clip: self.saturation_clip,
            rng_seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Blurred training views per scene.
    pub train_views: usize,
    /// Sharp held-out novel views per scene.
    pub novel_views: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels (fx = fy; principal point centered).
    pub focal_px: f64,
    /// Camera orbit around `target`: radius and elevation bands.
    pub orbit_radius: [f64; 2],
    pub elevation_deg: [f64; 2],
    pub azimuth_jitter_deg: f64,
    pub target: [f64; 3],
    pub blur: BlurConfig,
    pub degradation: DegradationConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_views: 29,
            novel_views: 5,
            width: 96,
            height: 96,
            focal_px: 110.0,
            orbit_radius: [3.6, 4.2],
            elevation_deg: [8.0, 30.0],
            azimuth_jitter_deg: 2.0,
            target: [0.0, 0.0, 0.0],
            blur: BlurConfig::Motion {
                translation_mag: 0.12,
                rotation_mag: 0.004,
                n_controls: 4,
                n_frames: 51,
                same_direction: false,
            },
            degradation: DegradationConfig::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn camera(&self) -> Result<Camera> {
        Camera::new(
            self.focal_px,
            self.focal_px,
            self.width as f64 / 2.0,
            self.height as f64 / 2.0,
            self.width,
            self.height,
        )
    }
}

/// How one training view was blurred; recorded in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlurRecord {
    Motion {
        control_poses: Vec<io::PoseRecord>,
        n_frames: usize,
    },
    Defocus {
        aperture_radius: f64,
        blade_count: u32,
        focal_distance: f64,
        samples_per_pixel: usize,
        render_seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainViewRecord {
    pub view_id: u32,
    pub pose: io::PoseRecord,
    pub blurred_path: String,
    pub sharp_png_path: String,
    pub sharp_pfm_path: String,
    pub blur: BlurRecord,
    pub degradation: DegradationParams,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NovelViewRecord {
    pub view_id: u32,
    pub pose: io::PoseRecord,
    pub sharp_png_path: String,
    pub sharp_pfm_path: String,
}

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub scene_id: String,
    pub blur_kind: String,
    pub seed: u64,
    pub camera: Camera,
    pub background: [f64; 3],
    /// Bounds of the scene's solid geometry; sizes the radiance-field grid.
    pub aabb_min: [f64; 3],
    pub aabb_max: [f64; 3],
    pub train_views: Vec<TrainViewRecord>,
    pub novel_views: Vec<NovelViewRecord>,
}

impl DatasetManifest {
    pub fn save(&self, dataset_dir: &Path) -> Result<()> {
        io::write_toml(&dataset_dir.join(MANIFEST_FILE), self)
    }

    pub fn load(dataset_dir: &Path) -> Result<DatasetManifest> {
        let path = dataset_dir.join(MANIFEST_FILE);
        let m: DatasetManifest = io::read_toml(&path)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported manifest version {}", m.version),
            ));
        }
        Ok(m)
    }
}

/// Orbit pose for slot `i` of `total`, jittered from the per-view stream.
fn orbit_pose(cfg: &SynthConfig, i: usize, total: usize) -> Pose {
    let mut rng = rng::stream(cfg.seed, &[phase::VIEW_POSE, i as u64]);
    let base_az = 2.0 * std::f64::consts::PI * i as f64 / total as f64;
    let az = base_az + cfg.azimuth_jitter_deg.to_radians() * rng.gen_range(-1.0..=1.0);
    let elev = rng
        .gen_range(cfg.elevation_deg[0]..=cfg.elevation_deg[1])
        .to_radians();
    let radius = rng.gen_range(cfg.orbit_radius[0]..=cfg.orbit_radius[1]);
    let target = Vector3::from(cfg.target);
    let eye = target
        + Vector3::new(
            radius * elev.cos() * az.cos(),
            radius * elev.sin(),
            radius * elev.cos() * az.sin(),
        );
    Pose::look_at(eye, target, Vector3::y())
}

/// Median of the finite entries of a depth map; fallback when nothing is hit.
fn median_depth(depths: &[f64]) -> f64 {
    let mut finite: Vec<f64> = depths.iter().copied().filter(|d| d.is_finite()).collect();
    if finite.is_empty() {
        return 1.0;
    }
    finite.sort_by(|a, b| a.total_cmp(b));
    finite[finite.len() / 2]
}

/// Shared-direction (BlurRF-SB style) linear trajectory: fixed unit direction
/// for the whole dataset, per-view random length in [0.5, 1] × magnitude.
fn same_direction_trajectory(
    dataset_seed: u64,
    view_seed: u64,
    nominal: &Pose,
    translation_mag: f64,
) -> Result<Trajectory> {
    let mut dir_rng = rng::stream(dataset_seed, &[phase::TRAJECTORY, u64::MAX]);
    let dir = loop {
        let v = Vector3::new(
            dir_rng.gen_range(-1.0..=1.0f64),
            dir_rng.gen_range(-1.0..=1.0f64),
            dir_rng.gen_range(-1.0..=1.0f64),
        );
        let n = v.norm();
        if n > 1e-3 {
            break v / n;
        }
    };
    let mut len_rng = rng::stream(view_seed, &[phase::TRAJECTORY]);
    let len = translation_mag * len_rng.gen_range(0.5..=1.0);
    let end = Pose::new(nominal.rotation, nominal.translation + dir * len);
    Trajectory::new(vec![*nominal, end])
}

struct GeneratedView {
    blurred: SrgbImage,
    sharp: LinearImage,
    blur: BlurRecord,
    degradation: DegradationParams,
}

fn generate_train_view(
    scene: &Scene,
    camera: &Camera,
    cfg: &SynthConfig,
    view_id: u32,
    pose: &Pose,
) -> Result<GeneratedView> {
    let view_seed = derive_seed(cfg.seed, &[phase::TRAJECTORY, view_id as u64]);
    let (blurred_linear, sharp, blur) = match &cfg.blur {
        BlurConfig::Motion {
            translation_mag,
            rotation_mag,
            n_controls,
            n_frames,
            same_direction,
        } => {
            let traj = if *same_direction {
                same_direction_trajectory(cfg.seed, view_seed, pose, *translation_mag)?
            } else {
                geometry::random_trajectory(
                    view_seed,
                    pose,
                    *translation_mag,
                    *rotation_mag,
                    *n_controls,
                )?
            };
            let (blurred, gt) = synth_motion_blur(scene, camera, &traj, *n_frames)?;
            let record = BlurRecord::Motion {
                control_poses: traj.control_poses().iter().map(io::PoseRecord::from).collect(),
                n_frames: *n_frames,
            };
            (blurred, gt, record)
        }
        BlurConfig::Defocus {
            aperture_radius,
            focal_range_rel,
            samples_per_pixel,
        } => {
            let mut rng = rng::stream(cfg.seed, &[phase::LENS, view_id as u64]);
            let blade_count = rng.gen_range(7u32..=9);
            let depth = median_depth(&scene::render_depth(scene, camera, pose));
            let focal_distance = depth * rng.gen_range(focal_range_rel[0]..=focal_range_rel[1]);
            let lens = LensConfig {
                aperture_radius: *aperture_radius,
                blade_count,
                focal_distance,
            };
            let render_seed = derive_seed(cfg.seed, &[phase::LENS, view_id as u64, 1]);
            let (blurred, gt) =
                synth_defocus(scene, camera, pose, &lens, *samples_per_pixel, render_seed)?;
            let record = BlurRecord::Defocus {
                aperture_radius: *aperture_radius,
                blade_count,
                focal_distance,
                samples_per_pixel: *samples_per_pixel,
                render_seed,
            };
            (blurred, gt, record)
        }
    };
    let degradation = cfg
        .degradation
        .params(derive_seed(cfg.seed, &[phase::DEGRADATION, view_id as u64]));
    let blurred = apply_degradation(&blurred_linear, &degradation)?;
    Ok(GeneratedView {
        blurred,
        sharp,
        blur,
        degradation,
    })
}

/// Generate one dataset tree: `train_views` blurred/sharp pairs plus
/// `novel_views` held-out sharp views, manifest, pose file, and the resolved
/// generation config. Byte-identical for identical (scene, config).
pub fn generate_dataset(
    scene: &Scene,
    scene_id: &str,
    cfg: &SynthConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let camera = cfg.camera()?;
    let total = cfg.train_views + cfg.novel_views;
    if cfg.train_views < 2 {
        return Err(Error::InvalidInput("need at least 2 training views".into()));
    }

    fs::create_dir_all(out_dir.join("train"))?;
    fs::create_dir_all(out_dir.join("test"))?;

    // Interleave held-out slots evenly among the orbit positions.
    let novel_slots: Vec<usize> = (0..cfg.novel_views)
        .map(|j| j * total / cfg.novel_views.max(1))
        .collect();
    let mut train_poses = Vec::new();
    let mut novel_poses = Vec::new();
    for i in 0..total {
        let pose = orbit_pose(cfg, i, total);
        if novel_slots.contains(&i) && novel_poses.len() < cfg.novel_views {
            novel_poses.push(pose);
        } else {
            train_poses.push(pose);
        }
    }
    debug_assert_eq!(train_poses.len(), cfg.train_views);

    // Per-view work is independent; order is restored by collect.
    let generated: Result<Vec<GeneratedView>> = train_poses
        .par_iter()
        .enumerate()
        .map(|(id, pose)| generate_train_view(scene, &camera, cfg, id as u32, pose))
        .collect();
    let generated = generated?;

    let mut train_views = Vec::with_capacity(cfg.train_views);
    for (id, (view, pose)) in generated.iter().zip(&train_poses).enumerate() {
        let blurred_path = format!("train/view_{id:04}.blur.png");
        let sharp_png_path = format!("train/view_{id:04}.sharp.png");
        let sharp_pfm_path = format!("train/view_{id:04}.sharp.pfm");
        io::write_png(&out_dir.join(&blurred_path), &view.blurred)?;
        io::write_png(&out_dir.join(&sharp_png_path), &encode_image(&view.sharp))?;
        io::write_pfm(&out_dir.join(&sharp_pfm_path), &view.sharp)?;
        train_views.push(TrainViewRecord {
            view_id: id as u32,
            pose: io::PoseRecord::from(pose),
            blurred_path,
            sharp_png_path,
            sharp_pfm_path,
            blur: view.blur.clone(),
            degradation: view.degradation,
        });
    }

    let mut novel_views = Vec::with_capacity(cfg.novel_views);
    for (j, pose) in novel_poses.iter().enumerate() {
        let sharp = scene::render_pinhole(scene, &camera, pose);
        let sharp_png_path = format!("test/view_{j:04}.sharp.png");
        let sharp_pfm_path = format!("test/view_{j:04}.sharp.pfm");
        io::write_png(&out_dir.join(&sharp_png_path), &encode_image(&sharp))?;
        io::write_pfm(&out_dir.join(&sharp_pfm_path), &sharp)?;
        novel_views.push(NovelViewRecord {
            view_id: j as u32,
            pose: io::PoseRecord::from(pose),
            sharp_png_path,
            sharp_pfm_path,
        });
    }

    let (aabb_min, aabb_max) = scene
        .bounded_aabb(0.25)
        .unwrap_or((Vector3::repeat(-1.0), Vector3::repeat(1.0)));

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        scene_id: scene_id.to_string(),
        blur_kind: cfg.blur.kind_name().to_string(),
        seed: cfg.seed,
        camera,
        background: [scene.background.x, scene.background.y, scene.background.z],
        aabb_min: [aabb_min.x, aabb_min.y, aabb_min.z],
        aabb_max: [aabb_max.x, aabb_max.y, aabb_max.z],
        train_views,
        novel_views,
    };
    manifest.save(out_dir)?;

    // Pose file for external tools; includes train and held-out views.
    let mut all = Vec::new();
    for rec in &manifest.train_views {
        all.push((rec.view_id, rec.pose.to_pose(), camera));
    }
    for rec in &manifest.novel_views {
        all.push((10_000 + rec.view_id, rec.pose.to_pose(), camera));
    }
    io::PoseFile::from_views(&all).save(&out_dir.join("poses.toml"))?;

    // The scene and the resolved generation config: the tree alone is
    // enough to reproduce itself bit-exactly.
    io::SceneFile::from_scene(scene).save(&out_dir.join("scene.toml"))?;
    io::write_toml(&out_dir.join("synth_config.toml"), cfg)?;
    Ok(manifest)
}
