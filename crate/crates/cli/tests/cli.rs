//! End-to-end tests of the `rfdeblur` binary: every subcommand, the exit
//! code contract, and command-level reproducibility.

use rfdeblur_core::io;
use rfdeblur_core::pipeline::RunRecord;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rfdeblur"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn rfdeblur");
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_scene(dir: &Path) -> PathBuf {
    let path = dir.join("toy.toml");
    std::fs::write(
        &path,
        r#"
version = 1
background = [0.12, 0.14, 0.18]
light_direction = [0.35, 1.0, 0.25]

[[primitives]]
kind = "sphere"
center = [0.0, 0.1, 0.0]
radius = 0.7
albedo = [0.8, 0.35, 0.25]

[[primitives]]
kind = "box"
min = [-1.2, -0.9, -1.2]
max = [1.2, -0.6, 1.2]
albedo = [0.35, 0.55, 0.75]
"#,
    )
    .unwrap();
    path
}

/// Small synth+run configuration so CLI tests stay fast.
fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(
        &path,
        r#"
[synth]
train_views = 6
novel_views = 2
width = 36
height = 36
focal_px = 42.0

[synth.blur]
kind = "motion"
translation_mag = 0.06
rotation_mag = 0.0
n_controls = 2
n_frames = 7

[pipeline]
n_iterations = 2
render_steps = 48

[[pipeline.rf_schedule]]
iterations = 180
initial_resolution = [14, 14, 14]
max_resolution = 14
prune_upsample_every = 0
rays_per_batch = 512
n_steps_per_ray = 32

[pipeline.deblur]
kernel_size = 7
"#,
    )
    .unwrap();
    path
}

struct Env {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    scene: PathBuf,
}

fn setup() -> Env {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    Env {
        config: write_config(&root),
        scene: write_scene(&root),
        _tmp: tmp,
        root,
    }
}

fn synth(env: &Env, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--config",
        env.config.to_str().unwrap(),
        "--scene",
        env.scene.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
    ];
    args.extend_from_slice(extra);
    run_ok(&args);
}

#[test]
fn synth_produces_expected_tree_and_is_deterministic() {
    let env = setup();
    let out_a = env.root.join("data_a");
    let out_b = env.root.join("data_b");
    synth(&env, &out_a, &[]);
    synth(&env, &out_b, &[]);

    let manifest = rfdeblur_core::DatasetManifest::load(&out_a).unwrap();
    assert_eq!(manifest.train_views.len(), 6);
    assert_eq!(manifest.novel_views.len(), 2);
    for rec in &manifest.train_views {
        assert!(out_a.join(&rec.blurred_path).is_file());
        assert!(out_a.join(&rec.sharp_png_path).is_file());
        assert!(out_a.join(&rec.sharp_pfm_path).is_file());
    }
    assert!(out_a.join("poses.toml").is_file());
    assert!(out_a.join("scene.toml").is_file());
    assert!(out_a.join("synth_config.toml").is_file());
    assert!(out_a.join("cli_config.toml").is_file());

    assert_eq!(
        io::dir_digest(&out_a).unwrap(),
        io::dir_digest(&out_b).unwrap(),
        "same command must produce byte-identical trees"
    );
}

#[test]
fn synth_zero_magnitude_no_noise_blur_equals_sharp() {
    let env = setup();
    let out = env.root.join("data");
    synth(&env, &out, &["--magnitude", "0", "--noise", "off"]);
    let manifest = rfdeblur_core::DatasetManifest::load(&out).unwrap();
    for rec in &manifest.train_views {
        let blur = std::fs::read(out.join(&rec.blurred_path)).unwrap();
        let sharp = std::fs::read(out.join(&rec.sharp_png_path)).unwrap();
        assert_eq!(blur, sharp);
    }
}

#[test]
fn full_run_render_eval_report_cycle() {
    let env = setup();
    let data = env.root.join("data");
    synth(&env, &data, &[]);

    // run: N = 2 -> two constructions, one guided round
    let work = env.root.join("work");
    run_ok(&[
        "run",
        "--config",
        env.config.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--workdir",
        work.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert!(work.join("grid.ckpt").is_file());
    assert!(work.join("iter_01/grid.ckpt").is_file());
    assert!(work.join("iter_02/grid.ckpt").is_file());
    assert!(work.join("iter_01/deblurred").is_dir());
    assert!(!work.join("iter_02/deblurred").exists());

    // render at the training poses from the final checkpoint: must match the
    // iter_02 rendered artifacts bit-exactly (same steps and background).
    let record = RunRecord::load(&work).unwrap();
    let manifest = rfdeblur_core::DatasetManifest::load(&data).unwrap();
    let bg = format!(
        "{},{},{}",
        manifest.background[0], manifest.background[1], manifest.background[2]
    );
    let rendered = env.root.join("rendered");
    run_ok(&[
        "render",
        "--grid",
        work.join("grid.ckpt").to_str().unwrap(),
        "--poses",
        data.join("poses.toml").to_str().unwrap(),
        "--out",
        rendered.to_str().unwrap(),
        "--steps",
        &record.config.render_steps.to_string(),
        "--background",
        &bg,
    ]);
    for v in 0..manifest.train_views.len() {
        let a = std::fs::read(rendered.join(format!("view_{v:04}.pfm"))).unwrap();
        let b = std::fs::read(work.join(format!("iter_02/rendered/view_{v:04}.pfm"))).unwrap();
        assert_eq!(a, b, "render from checkpoint differs from artifact (view {v})");
    }

    // eval: renders against themselves -> capped PSNR rows
    let eval_out = env.root.join("eval");
    let out = run_ok(&[
        "eval",
        "--renders",
        work.join("iter_02/heldout").to_str().unwrap(),
        "--gt",
        work.join("iter_02/heldout").to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("99.000"), "expected capped PSNR rows:\n{stdout}");
    assert!(eval_out.join("report.toml").is_file());
    assert!(eval_out.join("report.csv").is_file());

    // report: two iteration rows
    let out = run_ok(&["report", "--workdir", work.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        stdout.lines().filter(|l| l.trim_start().starts_with(['1', '2'])).count(),
        2,
        "expected 2 iteration rows:\n{stdout}"
    );
    assert!(work.join("report.toml").is_file());
}

#[test]
fn stopped_run_resumes_to_completion() {
    let env = setup();
    let data = env.root.join("data");
    synth(&env, &data, &[]);
    let work = env.root.join("work");
    run_ok(&[
        "run",
        "--config",
        env.config.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--workdir",
        work.to_str().unwrap(),
        "--seed",
        "4",
        "--stop-after",
        "1",
    ]);
    assert!(!work.join("grid.ckpt").exists());
    run_ok(&["run", "--resume", "--workdir", work.to_str().unwrap()]);
    assert!(work.join("grid.ckpt").is_file());

    // resuming a finished run is a no-op that still reports the outcome
    let out = run_ok(&["run", "--resume", "--workdir", work.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("final grid"));
}

#[test]
fn exit_codes_distinguish_config_from_runtime_errors() {
    let env = setup();

    // unknown config key -> config error (2)
    let bad_cfg = env.root.join("bad.toml");
    std::fs::write(&bad_cfg, "no_such_key = true\n").unwrap();
    let out = bin()
        .args(["synth", "--config", bad_cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "unknown key should be a config error");

    // missing required flag -> config error (2)
    let out = bin().args(["synth"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // corrupt checkpoint -> config error during load (2), clean message
    let junk = env.root.join("junk.ckpt");
    std::fs::write(&junk, [b'x'; 200]).unwrap();
    let poses = env.root.join("poses.toml");
    std::fs::write(
        &poses,
        "version = 1\n[[views]]\nview_id = 0\nmatrix = [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]\nfx = 30\nfy = 30\ncx = 16\ncy = 16\nwidth = 32\nheight = 32\n",
    )
    .unwrap();
    let out = bin()
        .args([
            "render",
            "--grid",
            junk.to_str().unwrap(),
            "--poses",
            poses.to_str().unwrap(),
            "--out",
            env.root.join("r").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));

    // missing ground-truth files -> runtime error (3) with per-file listing
    let renders = env.root.join("renders");
    let gt = env.root.join("gt");
    std::fs::create_dir_all(&renders).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    let img = rfdeblur_core::LinearImage::constant(16, 16, [0.5; 3]);
    io::write_pfm(&renders.join("view_0000.pfm"), &img).unwrap();
    io::write_pfm(&renders.join("view_0001.pfm"), &img).unwrap();
    io::write_pfm(&gt.join("view_0000.pfm"), &img).unwrap();
    let out = bin()
        .args([
            "eval",
            "--renders",
            renders.to_str().unwrap(),
            "--gt",
            gt.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("view_0001.pfm"),
        "missing files must be listed: {stderr}"
    );
}
