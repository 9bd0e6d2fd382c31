//! Command-line front end: dataset synthesis, pipeline runs, rendering,
//! evaluation, and run reports.
//!
//! Configuration comes from an optional TOML file (`--config`) with
//! command-line overrides on top; every output tree receives the fully
//! resolved configuration so results are bit-exactly reproducible. Exit
//! codes: 0 success, 2 configuration error, 3 runtime failure.

mod config;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use rfdeblur_core::blursynth::{self, BlurConfig, DatasetManifest};
use rfdeblur_core::eval::{self, MetricSpace, MetricReport, ViewMetric};
use rfdeblur_core::io;
use rfdeblur_core::pipeline::{self, PipelineOutcome};
use rfdeblur_core::voxelrf::{self, VoxelGrid};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Errors before any work starts are configuration errors; errors after
/// that are runtime failures. The distinction drives the exit code.
enum CmdError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

type CmdResult = Result<(), CmdError>;

trait Phase<T> {
    fn config_phase(self) -> Result<T, CmdError>;
    fn runtime_phase(self) -> Result<T, CmdError>;
}

impl<T, E: Into<anyhow::Error>> Phase<T> for Result<T, E> {
    fn config_phase(self) -> Result<T, CmdError> {
        self.map_err(|e| CmdError::Config(e.into()))
    }
    fn runtime_phase(self) -> Result<T, CmdError> {
        self.map_err(|e| CmdError::Runtime(e.into()))
    }
}

#[derive(Parser)]
#[command(name = "rfdeblur", version, about = "Iterative radiance-field deblurring toolkit")]
struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Working directory for pipeline runs (overrides the config file).
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic blurred multi-view dataset from a scene file.
    Synth(SynthArgs),
    /// Run the iterative deblurring pipeline on a dataset.
    Run(RunArgs),
    /// Render views from a radiance-field checkpoint at given poses.
    Render(RenderArgs),
    /// Compare a directory of renders against ground-truth images.
    Eval(EvalArgs),
    /// Rebuild the per-iteration metric report of a pipeline workdir.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description file (TOML).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Blur type: motion | defocus.
    #[arg(long)]
    blur: Option<String>,
    /// Motion blur magnitude (max control-pose offset, scene units) or
    /// defocus aperture radius.
    #[arg(long)]
    magnitude: Option<f64>,
    /// Noise stage: on | off.
    #[arg(long)]
    noise: Option<String>,
    /// Blurred training views per scene.
    #[arg(long)]
    views: Option<usize>,
    /// All views share one blur direction (motion only).
    #[arg(long)]
    same_direction: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset directory (as produced by `synth`).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Number of radiance-field constructions N.
    #[arg(long)]
    iterations: Option<usize>,
    /// Stop after this many completed iterations (resume later).
    #[arg(long)]
    stop_after: Option<usize>,
    /// Resume the checkpointed run in --workdir instead of starting fresh.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// Radiance-field checkpoint.
    #[arg(long)]
    grid: PathBuf,
    /// Pose file (TOML, as written next to datasets).
    #[arg(long)]
    poses: PathBuf,
    /// Output directory for rendered views.
    #[arg(long)]
    out: PathBuf,
    /// Quadrature steps per ray.
    #[arg(long, default_value_t = 96)]
    steps: usize,
    /// Background color "r,g,b" (linear).
    #[arg(long, default_value = "0,0,0")]
    background: String,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of rendered views (PFM, with PNG fallback).
    #[arg(long)]
    renders: PathBuf,
    /// Directory of ground-truth views with matching file names.
    #[arg(long)]
    gt: PathBuf,
    /// Where to write the report (defaults to the renders directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metric color space: display | linear.
    #[arg(long)]
    space: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Where to write the report (defaults to the workdir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metric color space: display | linear.
    #[arg(long)]
    space: Option<String>,
}

fn parse_metric_space(s: &str) -> anyhow::Result<MetricSpace> {
    match s {
        "display" => Ok(MetricSpace::Display),
        "linear" => Ok(MetricSpace::Linear),
        other => bail!("unknown metric space {other:?} (expected display|linear)"),
    }
}

fn parse_rgb(s: &str) -> anyhow::Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("cannot parse color {s:?}"))?;
    if parts.len() != 3 {
        bail!("color {s:?} must have exactly 3 components");
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("RFDEBLUR_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    init_thread_pool();
    let cli = Cli::parse();

    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(&cli, args),
        Command::Run(args) => cmd_run(&cli, args),
        Command::Render(args) => cmd_render(&cli, args),
        Command::Eval(args) => cmd_eval(&cli, args),
        Command::Report(args) => cmd_report(&cli, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CmdError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn load_run_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(workdir) = &cli.workdir {
        cfg.workdir = Some(workdir.clone());
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// synth

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> CmdResult {
    let mut cfg = load_run_config(cli).config_phase()?;
    let scene_path = args
        .scene
        .clone()
        .or_else(|| cfg.scene.clone())
        .ok_or_else(|| anyhow!("--scene is required (or `scene` in the config file)"))
        .config_phase()?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| anyhow!("--out is required (or `out` in the config file)"))
        .config_phase()?;

    if let Some(seed) = cfg.seed {
        cfg.synth.seed = seed;
    }
    if let Some(views) = args.views {
        cfg.synth.train_views = views;
    }
    if let Some(kind) = &args.blur {
        cfg.synth.blur = match kind.as_str() {
            "motion" => match cfg.synth.blur {
                BlurConfig::Motion { .. } => cfg.synth.blur,
                _ => BlurConfig::Motion {
                    translation_mag: 0.12,
                    rotation_mag: 0.004,
                    n_controls: 4,
                    n_frames: 51,
                    same_direction: false,
                },
            },
            "defocus" => match cfg.synth.blur {
                BlurConfig::Defocus { .. } => cfg.synth.blur,
                _ => BlurConfig::Defocus {
                    aperture_radius: 0.05,
                    focal_range_rel: [0.5, 1.5],
                    samples_per_pixel: 128,
                },
            },
            other => {
                return Err(CmdError::Config(anyhow!(
                    "unknown blur type {other:?} (expected motion|defocus)"
                )))
            }
        };
    }
    if let Some(mag) = args.magnitude {
        match &mut cfg.synth.blur {
            BlurConfig::Motion {
                translation_mag, ..
            } => *translation_mag = mag,
            BlurConfig::Defocus {
                aperture_radius, ..
            } => *aperture_radius = mag,
        }
    }
    if args.same_direction {
        match &mut cfg.synth.blur {
            BlurConfig::Motion { same_direction, .. } => *same_direction = true,
            BlurConfig::Defocus { .. } => {
                return Err(CmdError::Config(anyhow!(
                    "--same-direction applies to motion blur only"
                )))
            }
        }
    }
    if let Some(noise) = &args.noise {
        match noise.as_str() {
            "on" => {}
            "off" => {
                cfg.synth.degradation.shot_alpha = 0.0;
                cfg.synth.degradation.read_sigma = 0.0;
            }
            other => {
                return Err(CmdError::Config(anyhow!(
                    "unknown noise mode {other:?} (expected on|off)"
                )))
            }
        }
    }
    let scene = io::SceneFile::load(&scene_path).config_phase()?;
    let scene_id = scene_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());

    std::fs::create_dir_all(&out).runtime_phase()?;
    let manifest =
        blursynth::generate_dataset(&scene, &scene_id, &cfg.synth, &out).runtime_phase()?;
    // The recorded config omits machine-specific paths: the tree carries its
    // own scene.toml, and the output location is wherever the tree lives.
    cfg.scene = None;
    cfg.out = None;
    cfg.workdir = None;
    cfg.dataset = None;
    cfg.save(&out.join("cli_config.toml")).runtime_phase()?;
    println!(
        "dataset {}: {} training views + {} novel views, blur {}, seed {} -> {}",
        manifest.scene_id,
        manifest.train_views.len(),
        manifest.novel_views.len(),
        manifest.blur_kind,
        manifest.seed,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// run

fn print_outcome(outcome: &PipelineOutcome) {
    for it in &outcome.iterations {
        println!(
            "iter {:>2}: train loss {:.3e}  held-out PSNR {:.3} dB  SSIM {:.4}",
            it.iteration, it.train_loss, it.heldout_psnr_db, it.heldout_ssim
        );
    }
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> CmdResult {
    let mut cfg = load_run_config(cli).config_phase()?;
    let workdir = cfg
        .workdir
        .clone()
        .ok_or_else(|| anyhow!("--workdir is required"))
        .config_phase()?;

    if args.resume {
        let outcome = pipeline::resume_pipeline(&workdir).runtime_phase()?;
        print_outcome(&outcome);
        if outcome.final_grid.is_some() {
            println!("final grid: {}", workdir.join("grid.ckpt").display());
        }
        return Ok(());
    }

    let dataset = args
        .dataset
        .clone()
        .or_else(|| cfg.dataset.clone())
        .ok_or_else(|| anyhow!("--dataset is required (or `dataset` in the config file)"))
        .config_phase()?;
    let manifest = DatasetManifest::load(&dataset).config_phase()?;

    if let Some(seed) = cfg.seed {
        cfg.pipeline.seed = seed;
    }
    if let Some(n) = args.iterations {
        cfg.pipeline.n_iterations = n;
    }
    cfg.pipeline.stop_after = args.stop_after;
    cfg.pipeline.workdir = workdir;
    cfg.pipeline.metric_space = cfg.eval.metric_space;
    cfg.pipeline.validate().config_phase()?;

    let blurred: Vec<_> = manifest
        .train_views
        .iter()
        .map(|rec| io::read_png(&dataset.join(&rec.blurred_path)))
        .collect::<Result<_, _>>()
        .runtime_phase()?;
    let outcome =
        pipeline::run_pipeline(&blurred, &manifest, &dataset, &cfg.pipeline).runtime_phase()?;
    print_outcome(&outcome);
    if outcome.final_grid.is_some() {
        println!("final grid: {}", cfg.pipeline.workdir.join("grid.ckpt").display());
    } else {
        println!("stopped early; resume with: rfdeblur run --resume --workdir <dir>");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// render

#[derive(Serialize)]
struct RenderRecord {
    version: u32,
    grid: String,
    poses: String,
    steps: usize,
    background: [f64; 3],
}

fn cmd_render(_cli: &Cli, args: &RenderArgs) -> CmdResult {
    let background = parse_rgb(&args.background).config_phase()?;
    if args.steps == 0 {
        return Err(CmdError::Config(anyhow!("--steps must be >= 1")));
    }
    let grid = VoxelGrid::load(&args.grid).config_phase()?;
    let poses = io::PoseFile::load(&args.poses).config_phase()?;

    std::fs::create_dir_all(&args.out).runtime_phase()?;
    for record in &poses.views {
        let (view_id, pose, camera) = io::PoseFile::decode(record).runtime_phase()?;
        let img = voxelrf::render_view(&grid, &camera, &pose, background, args.steps)
            .map(|v| v as f32 as f64);
        io::write_pfm(&args.out.join(format!("view_{view_id:04}.pfm")), &img).runtime_phase()?;
        io::write_png(
            &args.out.join(format!("view_{view_id:04}.png")),
            &blursynth::encode_image(&img),
        )
        .runtime_phase()?;
    }
    io::write_toml(
        &args.out.join("render_config.toml"),
        &RenderRecord {
            version: 1,
            grid: args.grid.to_string_lossy().into_owned(),
            poses: args.poses.to_string_lossy().into_owned(),
            steps: args.steps,
            background,
        },
    )
    .runtime_phase()?;
    println!("rendered {} views -> {}", poses.views.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn load_linear(path: &Path) -> anyhow::Result<rfdeblur_core::LinearImage> {
    if path.extension().map_or(false, |e| e == "pfm") {
        Ok(io::read_pfm(path)?)
    } else {
        Ok(blursynth::decode_image(&io::read_png(path)?))
    }
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> CmdResult {
    let cfg = load_run_config(cli).config_phase()?;
    let space = match &args.space {
        Some(s) => parse_metric_space(s).config_phase()?,
        None => cfg.eval.metric_space,
    };
    if !args.renders.is_dir() {
        return Err(CmdError::Config(anyhow!(
            "renders directory {} does not exist",
            args.renders.display()
        )));
    }
    if !args.gt.is_dir() {
        return Err(CmdError::Config(anyhow!(
            "gt directory {} does not exist",
            args.gt.display()
        )));
    }

    let mut names: Vec<String> = std::fs::read_dir(&args.renders)
        .runtime_phase()?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".pfm") || n.ends_with(".png"))
        .collect();
    // Prefer the PFM variant when both encodings of a view are present.
    names.sort();
    names.dedup_by_key(|n| n.trim_end_matches(".png").trim_end_matches(".pfm").to_string());
    if names.is_empty() {
        return Err(CmdError::Config(anyhow!(
            "no .pfm or .png renders found in {}",
            args.renders.display()
        )));
    }

    let missing: Vec<&String> = names
        .iter()
        .filter(|n| !args.gt.join(n.as_str()).is_file())
        .collect();
    if !missing.is_empty() {
        let mut msg = String::from("missing ground-truth files:\n");
        for name in missing {
            msg.push_str(&format!("  {}\n", args.gt.join(name).display()));
        }
        return Err(CmdError::Runtime(anyhow!(msg)));
    }

    let mut views = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let render = load_linear(&args.renders.join(name)).runtime_phase()?;
        let gt = load_linear(&args.gt.join(name)).runtime_phase()?;
        let (psnr_db, ssim) = eval::compare(&render, &gt, space).runtime_phase()?;
        println!("{name}: PSNR {psnr_db:.3} dB  SSIM {ssim:.4}");
        views.push(ViewMetric {
            view_id: i as u32,
            psnr_db,
            ssim,
        });
    }
    let report = MetricReport::from_iterations(space, vec![(1, views)]);
    let row = &report.iterations[0];
    println!(
        "mean over {} views: PSNR {:.3} dB  SSIM {:.4}",
        row.views.len(),
        row.mean_psnr_db,
        row.mean_ssim
    );
    let out = args.out.clone().unwrap_or_else(|| args.renders.clone());
    std::fs::create_dir_all(&out).runtime_phase()?;
    report.save(&out).runtime_phase()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// report

fn cmd_report(cli: &Cli, args: &ReportArgs) -> CmdResult {
    let cfg = load_run_config(cli).config_phase()?;
    let workdir = cfg
        .workdir
        .ok_or_else(|| anyhow!("--workdir is required"))
        .config_phase()?;
    let space = match &args.space {
        Some(s) => parse_metric_space(s).config_phase()?,
        None => cfg.eval.metric_space,
    };
    let report = eval::iteration_report(&workdir, space).runtime_phase()?;
    print!("{}", report.render_text());
    let out = args.out.clone().unwrap_or(workdir);
    std::fs::create_dir_all(&out).runtime_phase()?;
    report.save(&out).runtime_phase()?;
    println!("report written to {}", out.display());
    Ok(())
}
