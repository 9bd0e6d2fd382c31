//! The alternating reconstruction orchestrator.
//!
//! A run performs blind initial deblurring of all input views, then N
//! alternations: fit a radiance field to the current deblurred set, render
//! every input pose from it, and (except on the last iteration) deblur the
//! original inputs again with those renders as guidance. All intermediates
//! land in the working directory; the whole run is byte-reproducible from
//! (dataset, config, seed), and can be checkpointed and resumed to a
//! bit-identical continuation.
//!
//! Workdir layout:
//! ```text
//! workdir/
//!   run.toml                  resolved config + dataset path + seed
//!   state.ckpt                resume point (after each completed iteration)
//!   grid.ckpt                 final radiance field (copy of the last iter's)
//!   initial/deblurred/        D^0 (PFM + PNG) and selected blind kernels
//!   iter_NN/
//!     grid.ckpt               V^i
//!     rendered/               training-view renders R^i (PFM + PNG)
//!     heldout/                novel-view renders (PFM + PNG)
//!     deblurred/, kernels/    D^i and estimated kernels (i < N only)
//!     metrics.toml            train loss + held-out PSNR/SSIM
//! ```

use crate::blursynth::{encode_image, DatasetManifest};
use crate::deblur::{self, DeblurConfig};
use crate::error::{Error, Result};
use crate::eval::{self, MetricSpace};
use crate::geometry::{Camera, Pose};
use crate::image::{LinearImage, SrgbImage};
use crate::io;
use crate::rng::{self, derive_seed, phase};
use crate::voxelrf::{self, TrainConfig, VoxelGrid};
use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// Where training poses come from. Ground-truth poses are the dataset's;
/// the perturbed mode adds seeded Gaussian noise to emulate imperfect pose
/// estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PoseMode {
    #[default]
    GroundTruth,
    Perturbed {
        /// Per-axis translation noise (scene units).
        sigma_translation: f64,
        /// Rotation angle noise (radians) about a uniform random axis.
        sigma_rotation: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Number of radiance-field constructions N (the last one is not
    /// followed by a guided deblurring round).
    pub n_iterations: usize,
    /// Per-iteration radiance-field budgets; iteration i uses entry
    /// min(i−1, len−1). Scene bounds and background of each entry are
    /// overridden from the dataset manifest at run time.
    pub rf_schedule: Vec<TrainConfig>,
    pub deblur: DeblurConfig,
    pub pose_mode: PoseMode,
    /// Quadrature steps for guide / held-out / final renders.
    pub render_steps: usize,
    pub metric_space: MetricSpace,
    pub workdir: PathBuf,
    pub seed: u64,
    /// Stop after this many completed iterations (resume later); None runs
    /// to completion.
    pub stop_after: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_iterations: 5,
            rf_schedule: default_schedule(5),
            deblur: DeblurConfig::default(),
            pose_mode: PoseMode::GroundTruth,
            render_steps: 96,
            metric_space: MetricSpace::Display,
            workdir: PathBuf::from("run"),
            seed: 0,
            stop_after: None,
        }
    }
}

/// Escalating per-iteration budgets: later iterations get more optimizer
/// steps and one mid-training upsample to finer resolution.
pub fn default_schedule(n: usize) -> Vec<TrainConfig> {
    (0..n.max(1))
        .map(|i| {
            let iterations = 900 + 300 * i;
            TrainConfig {
                iterations,
                initial_resolution: [32, 32, 32],
                max_resolution: if i == 0 { 32 } else { 64 },
                prune_upsample_every: if i == 0 { 0 } else { iterations / 2 },
                ..Default::default()
            }
        })
        .collect()
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(Error::InvalidInput("n_iterations must be >= 1".into()));
        }
        if self.rf_schedule.is_empty() {
            return Err(Error::InvalidInput("rf_schedule must not be empty".into()));
        }
        if self.render_steps == 0 {
            return Err(Error::InvalidInput("render_steps must be >= 1".into()));
        }
        for cfg in &self.rf_schedule {
            cfg.validate()?;
        }
        self.deblur.validate()
    }

    /// The radiance-field config used for pipeline iteration `i` (1-based),
    /// with scene bounds and background taken from the manifest.
    fn rf_config(&self, i: usize, manifest: &DatasetManifest) -> TrainConfig {
        let idx = (i - 1).min(self.rf_schedule.len() - 1);
        let mut cfg = self.rf_schedule[idx].clone();
        cfg.aabb_min = manifest.aabb_min;
        cfg.aabb_max = manifest.aabb_max;
        cfg.background = manifest.background;
        cfg
    }

    /// Copy with the run-location fields cleared: two runs that differ only
    /// in where they write (or in an early-stop request) are the same run.
    fn canonical(&self) -> PipelineConfig {
        let mut c = self.clone();
        c.workdir = PathBuf::new();
        c.stop_after = None;
        c
    }

    fn digest(&self) -> u64 {
        let text = toml::to_string(&self.canonical()).unwrap_or_default();
        io::fnv1a(text.as_bytes())
    }
}

/// Training poses for a run. Ground-truth mode returns the dataset poses;
/// perturbed mode adds per-view seeded Gaussian noise.
pub fn pose_provider(manifest: &DatasetManifest, mode: &PoseMode, seed: u64) -> Vec<Pose> {
    manifest
        .train_views
        .iter()
        .map(|rec| {
            let pose = rec.pose.to_pose();
            match mode {
                PoseMode::GroundTruth => pose,
                PoseMode::Perturbed {
                    sigma_translation,
                    sigma_rotation,
                } => {
                    let mut rng =
                        rng::stream(seed, &[phase::POSE_PERTURB, rec.view_id as u64]);
                    let dt = Vector3::new(
                        sigma_translation * rng.sample::<f64, _>(StandardNormal),
                        sigma_translation * rng.sample::<f64, _>(StandardNormal),
                        sigma_translation * rng.sample::<f64, _>(StandardNormal),
                    );
                    let axis = loop {
                        let v = Vector3::new(
                            rng.gen_range(-1.0f64..=1.0),
                            rng.gen_range(-1.0f64..=1.0),
                            rng.gen_range(-1.0f64..=1.0),
                        );
                        if v.norm_squared() > 1e-9 {
                            break Unit::new_normalize(v);
                        }
                    };
                    let angle = sigma_rotation * rng.sample::<f64, _>(StandardNormal);
                    Pose::new(
                        pose.rotation * UnitQuaternion::from_axis_angle(&axis, angle),
                        pose.translation + dt,
                    )
                }
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Run record

pub const RUN_RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: u32,
    pub dataset_dir: String,
    pub config: PipelineConfig,
}

impl RunRecord {
    pub fn load(workdir: &Path) -> Result<RunRecord> {
        let path = workdir.join("run.toml");
        let rec: RunRecord = io::read_toml(&path)?;
        if rec.version != RUN_RECORD_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported run record version {}", rec.version),
            ));
        }
        Ok(rec)
    }
}

pub fn iter_dir_name(i: usize) -> String {
    format!("iter_{i:02}")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IterationSummary {
    pub iteration: usize,
    pub train_loss: f64,
    pub heldout_psnr_db: f64,
    pub heldout_ssim: f64,
}

pub struct PipelineOutcome {
    /// Final radiance field; None when the run stopped early (`stop_after`).
    pub final_grid: Option<VoxelGrid>,
    pub iterations: Vec<IterationSummary>,
}

// ---------------------------------------------------------------------------
// Pipeline state (checkpoint/resume)

/// Mid-run state: everything needed to continue after iteration
/// `completed_iteration`. RNG streams are derived from (seed, iteration),
/// so no generator state needs saving.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    pub completed_iteration: usize,
    pub deblurred: Vec<LinearImage>,
}

const STATE_MAGIC: &[u8; 8] = b"RFPLSTAT";
const STATE_VERSION: u32 = 1;

/// Write the resumable state; returns the checkpoint path.
pub fn checkpoint(state: &PipelineState, workdir: &Path, config_digest: u64) -> Result<PathBuf> {
    let path = workdir.join("state.ckpt");
    let file = fs::File::create(&path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(STATE_MAGIC)?;
    w.write_all(&STATE_VERSION.to_le_bytes())?;
    w.write_all(&config_digest.to_le_bytes())?;
    w.write_all(&(state.completed_iteration as u32).to_le_bytes())?;
    w.write_all(&(state.deblurred.len() as u32).to_le_bytes())?;
    let (width, height) = state
        .deblurred
        .first()
        .map(|img| (img.width(), img.height()))
        .unwrap_or((0, 0));
    w.write_all(&(width as u32).to_le_bytes())?;
    w.write_all(&(height as u32).to_le_bytes())?;
    for img in &state.deblurred {
        for p in img.pixels() {
            for c in 0..3 {
                w.write_all(&p[c].to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(path)
}

/// Read back a state checkpoint, validating magic, version, and the config
/// fingerprint of the run that wrote it.
pub fn resume_state(path: &Path, config_digest: u64) -> Result<PipelineState> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::format(path, m);
    if bytes.len() < 8 + 4 + 8 + 4 + 4 + 8 {
        return Err(bad("truncated state checkpoint"));
    }
    if &bytes[0..8] != STATE_MAGIC {
        return Err(bad("bad magic; not a pipeline state checkpoint"));
    }
    let mut pos = 8;
    let mut read_u32 = |bytes: &[u8]| -> u32 {
        let v = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        pos += 4;
        v
    };
    let version = read_u32(&bytes);
    if version != STATE_VERSION {
        return Err(bad(&format!("unsupported state version {version}")));
    }
    let digest = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
    pos += 8;
    if digest != config_digest {
        return Err(bad("state was written by a different configuration"));
    }
    let mut read_u32 = |bytes: &[u8]| -> u32 {
        let v = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        pos += 4;
        v
    };
    let completed_iteration = read_u32(&bytes) as usize;
    let n = read_u32(&bytes) as usize;
    let width = read_u32(&bytes) as usize;
    let height = read_u32(&bytes) as usize;
    let need = pos + n * width * height * 3 * 8;
    if bytes.len() != need {
        return Err(bad("state payload size mismatch"));
    }
    let mut deblurred = Vec::with_capacity(n);
    for _ in 0..n {
        let mut img = LinearImage::new(width, height);
        for p in img.pixels_mut() {
            for c in 0..3 {
                p[c] = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
                pos += 8;
            }
        }
        deblurred.push(img);
    }
    Ok(PipelineState {
        completed_iteration,
        deblurred,
    })
}

// ---------------------------------------------------------------------------
// The run itself

fn write_linear_set(dir: &Path, images: &[LinearImage]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, img) in images.iter().enumerate() {
        io::write_pfm(&dir.join(format!("view_{i:04}.pfm")), img)?;
        io::write_png(&dir.join(format!("view_{i:04}.png")), &encode_image(img))?;
    }
    Ok(())
}

struct RunContext<'a> {
    manifest: &'a DatasetManifest,
    cfg: &'a PipelineConfig,
    camera: Camera,
    poses: Vec<Pose>,
    heldout: Vec<(u32, Pose, LinearImage)>,
    blurred: &'a [SrgbImage],
}

impl<'a> RunContext<'a> {
    fn new(
        blurred: &'a [SrgbImage],
        manifest: &'a DatasetManifest,
        dataset_dir: &'a Path,
        cfg: &'a PipelineConfig,
    ) -> Result<RunContext<'a>> {
        cfg.validate()?;
        if blurred.len() != manifest.train_views.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} blurred views vs {} manifest records",
                blurred.len(),
                manifest.train_views.len()
            )));
        }
        if blurred.len() < 2 {
            return Err(Error::InvalidInput("need at least 2 views".into()));
        }
        let poses = pose_provider(manifest, &cfg.pose_mode, cfg.seed);
        let heldout = manifest
            .novel_views
            .iter()
            .map(|rec| {
                let gt = io::read_pfm(&dataset_dir.join(&rec.sharp_pfm_path))?;
                Ok((rec.view_id, rec.pose.to_pose(), gt))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RunContext {
            manifest,
            cfg,
            camera: manifest.camera,
            poses,
            heldout,
            blurred,
        })
    }

    /// One full pipeline iteration: construct V^i, render, measure, and
    /// (when i < N) produce the next deblurred set.
    fn run_iteration(
        &self,
        i: usize,
        deblurred: &[LinearImage],
    ) -> Result<(VoxelGrid, Vec<LinearImage>, IterationSummary)> {
        let cfg = self.cfg;
        let rf_cfg = cfg.rf_config(i, self.manifest);
        let train_seed = derive_seed(cfg.seed, &[phase::RF_TRAIN, i as u64]);
        let outcome = voxelrf::train_rf(deblurred, &self.poses, &self.camera, &rf_cfg, train_seed)?;
        let mut grid = outcome.grid;
        // Checkpoints store f32 parameters; quantize before rendering so
        // artifacts match renders from the saved checkpoint bit-exactly.
        grid.quantize_to_f32();

        let iter_dir = cfg.workdir.join(iter_dir_name(i));
        fs::create_dir_all(&iter_dir)?;
        grid.save(&iter_dir.join("grid.ckpt"))?;

        let background = self.manifest.background;
        let renders: Vec<LinearImage> = self
            .poses
            .par_iter()
            .map(|pose| {
                voxelrf::render_view(&grid, &self.camera, pose, background, cfg.render_steps)
            })
            .collect();
        write_linear_set(&iter_dir.join("rendered"), &renders)?;

        // Held-out novel views, for the per-iteration quality series.
        let heldout_dir = iter_dir.join("heldout");
        fs::create_dir_all(&heldout_dir)?;
        let mut psnr_acc = 0.0;
        let mut ssim_acc = 0.0;
        for (view_id, pose, gt) in &self.heldout {
            // Quantized to f32 before measuring, so the recorded metrics are
            // exactly reproducible from the PFM artifacts.
            let render =
                voxelrf::render_view(&grid, &self.camera, pose, background, cfg.render_steps)
                    .map(|v| v as f32 as f64);
            io::write_pfm(&heldout_dir.join(format!("view_{view_id:04}.pfm")), &render)?;
            io::write_png(
                &heldout_dir.join(format!("view_{view_id:04}.png")),
                &encode_image(&render),
            )?;
            let (p, s) = eval::compare(&render, gt, cfg.metric_space)?;
            psnr_acc += p;
            ssim_acc += s;
        }
        let n_heldout = self.heldout.len().max(1) as f64;
        let summary = IterationSummary {
            iteration: i,
            train_loss: *outcome.losses.last().unwrap_or(&f64::NAN),
            heldout_psnr_db: psnr_acc / n_heldout,
            heldout_ssim: ssim_acc / n_heldout,
        };
        io::write_toml(&iter_dir.join("metrics.toml"), &summary)?;

        // RF-guided deblurring feeds the next construction; skipped on the
        // last iteration.
        let next = if i < cfg.n_iterations {
            let results: Result<Vec<deblur::GuidedDeblurResult>> = self
                .blurred
                .par_iter()
                .zip(&renders)
                .map(|(b, r)| deblur::rf_guided_deblur_with_kernel(b, r, &cfg.deblur))
                .collect();
            let results = results?;
            let kernel_dir = iter_dir.join("kernels");
            fs::create_dir_all(&kernel_dir)?;
            for (v, res) in results.iter().enumerate() {
                if let Some(k) = &res.kernel {
                    k.save_text(&kernel_dir.join(format!("view_{v:04}.txt")))?;
                }
            }
            let images: Vec<LinearImage> = results.into_iter().map(|r| r.image).collect();
            write_linear_set(&iter_dir.join("deblurred"), &images)?;
            images
        } else {
            Vec::new()
        };

        Ok((grid, next, summary))
    }
}

/// Run the full pipeline on blurred views from a dataset. Writes all
/// artifacts under `cfg.workdir` and returns the final grid with the
/// per-iteration metric series.
pub fn run_pipeline(
    blurred: &[SrgbImage],
    manifest: &DatasetManifest,
    dataset_dir: &Path,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome> {
    let ctx = RunContext::new(blurred, manifest, dataset_dir, cfg)?;
    fs::create_dir_all(&cfg.workdir)?;
    // The record stores the canonical config: the workdir is implied by the
    // record's own location and early stops are per-invocation requests.
    io::write_toml(
        &cfg.workdir.join("run.toml"),
        &RunRecord {
            version: RUN_RECORD_VERSION,
            dataset_dir: dataset_dir.to_string_lossy().into_owned(),
            config: cfg.canonical(),
        },
    )?;

    // Initial blind deblurring of every view.
    let initial: Result<Vec<deblur::BlindDeblurResult>> = blurred
        .par_iter()
        .map(|b| deblur::initial_deblur_with_kernel(b, &cfg.deblur))
        .collect();
    let initial = initial?;
    let init_dir = cfg.workdir.join("initial");
    fs::create_dir_all(init_dir.join("kernels"))?;
    for (v, res) in initial.iter().enumerate() {
        res.kernel
            .save_text(&init_dir.join("kernels").join(format!("view_{v:04}.txt")))?;
    }
    let deblurred: Vec<LinearImage> = initial.into_iter().map(|r| r.image).collect();
    write_linear_set(&init_dir.join("deblurred"), &deblurred)?;

    let state = PipelineState {
        completed_iteration: 0,
        deblurred,
    };
    drive(ctx, state)
}

/// Continue a checkpointed run in `workdir`. A completed run returns its
/// final artifacts without doing further work.
pub fn resume_pipeline(workdir: &Path) -> Result<PipelineOutcome> {
    let record = RunRecord::load(workdir)?;
    let mut cfg = record.config;
    cfg.workdir = workdir.to_path_buf();
    let dataset_dir = PathBuf::from(&record.dataset_dir);
    let manifest = DatasetManifest::load(&dataset_dir)?;
    let blurred: Vec<SrgbImage> = manifest
        .train_views
        .iter()
        .map(|rec| io::read_png(&dataset_dir.join(&rec.blurred_path)))
        .collect::<Result<_>>()?;
    let state = resume_state(&workdir.join("state.ckpt"), cfg.digest())?;
    let ctx = RunContext::new(&blurred, &manifest, &dataset_dir, &cfg)?;
    drive(ctx, state)
}

fn drive(ctx: RunContext<'_>, mut state: PipelineState) -> Result<PipelineOutcome> {
    let cfg = ctx.cfg;
    let digest = cfg.digest();
    let mut summaries = load_existing_summaries(cfg, state.completed_iteration)?;
    let mut final_grid = None;

    if state.completed_iteration >= cfg.n_iterations {
        // Nothing left to do; reload the final grid from its artifact.
        let path = cfg.workdir.join(iter_dir_name(cfg.n_iterations)).join("grid.ckpt");
        return Ok(PipelineOutcome {
            final_grid: Some(VoxelGrid::load(&path)?),
            iterations: summaries,
        });
    }

    for i in (state.completed_iteration + 1)..=cfg.n_iterations {
        let (grid, next, summary) = ctx.run_iteration(i, &state.deblurred)?;
        summaries.push(summary);
        if i < cfg.n_iterations {
            state = PipelineState {
                completed_iteration: i,
                deblurred: next,
            };
        } else {
            // Keep the final deblurred set in the state so a resumed
            // complete run has the full record.
            state.completed_iteration = i;
            final_grid = Some(grid);
        }
        checkpoint(&state, &cfg.workdir, digest)?;
        if let Some(stop) = cfg.stop_after {
            if i >= stop && i < cfg.n_iterations {
                log::info!("stopping after iteration {i} as requested");
                return Ok(PipelineOutcome {
                    final_grid: None,
                    iterations: summaries,
                });
            }
        }
    }

    // Convenience copy of the final grid checkpoint at the workdir root.
    let last = cfg.workdir.join(iter_dir_name(cfg.n_iterations)).join("grid.ckpt");
    fs::copy(&last, cfg.workdir.join("grid.ckpt"))?;
    Ok(PipelineOutcome {
        final_grid,
        iterations: summaries,
    })
}

fn load_existing_summaries(
    cfg: &PipelineConfig,
    completed: usize,
) -> Result<Vec<IterationSummary>> {
    let mut out = Vec::new();
    for i in 1..=completed.min(cfg.n_iterations) {
        let path = cfg.workdir.join(iter_dir_name(i)).join("metrics.toml");
        out.push(io::read_toml(&path)?);
    }
    Ok(out)
}
