//! Command-line interface: one binary with `synth`, `train`, `render`,
//! `bench`, and `eval` subcommands.
//!
//! Flags can also come from a flat `key = value` config file (`--config`);
//! explicit flags win. Every run logs its fully resolved configuration so a
//! result is reproducible from the log alone. Exit codes: 0 success, 2
//! usage error, 1 runtime error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use nes_core::scene::{SceneSpec, SyntheticScene, TemplateKind};
use nes_core::training::{RenderMode, Split, TrainConfig};
use nes_core::volren::Camera;

use crate::drivers::{
    bench_table, benchmark, eval_csv, evaluate_parallel, mode_tag, render_frame, split_tag,
    train_with_artifacts,
};
use crate::error::Error;
use crate::imgio::{load_mask, save_png};
use crate::synth::{manifest_path, synth_scene};
use crate::{checkpoint, manifest};

#[derive(Parser)]
#[command(name = "nes", version, about = "Neural explicit surfaces: synthesize, train, render")]
struct Cli {
    /// Cap worker threads (falls back to the NES_THREADS env var, then to
    /// all logical cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    /// Flat `key = value` config file; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory: GT images, template.obj, manifest.
    Synth(SynthArgs),
    /// Train a model on a synthesized scene; writes checkpoint.nesf and loss.csv.
    Train(TrainArgs),
    /// Render one frame from a checkpoint to a PNG.
    Render(RenderArgs),
    /// Time repeated frame renders and report FPS per mode.
    Bench(BenchArgs),
    /// Compute PSNR/SSIM over holdout cameras; emits CSV.
    Eval(EvalArgs),
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Output scene directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    template: Option<TemplateArg>,
    /// Camera count; all but the last two train (at least one trains).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    cameras: Option<u64>,
    /// Total pose count; ceil(2N/3) train, the rest held out as unseen.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    poses: Option<u64>,
    #[arg(long)]
    bumps: Option<usize>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Narrow, steep bumps exercising the tilt correction.
    #[arg(long, action = ArgAction::SetTrue)]
    tilted: bool,
    /// Drop the pose-driven texture patch (texture becomes pose-invariant).
    #[arg(long, action = ArgAction::SetTrue)]
    static_texture: bool,
    /// Overwrite a non-empty output directory.
    #[arg(long, action = ArgAction::SetTrue)]
    force: bool,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Scene directory produced by `synth`.
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for the checkpoint and loss curve.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_pixels: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// CI-scale run: 4k steps against a 64x64 regeneration of the scene.
    #[arg(long, action = ArgAction::SetTrue)]
    fast: bool,
    /// Ablation: texture field loses its pose input (NES_FT).
    #[arg(long, action = ArgAction::SetTrue)]
    fixed_texture: bool,
    /// Ablation: offset field loses its pose input (NES_FG).
    #[arg(long, action = ArgAction::SetTrue)]
    fixed_geometry: bool,
    /// Ablation: drop the tilt correction from distance conversion.
    #[arg(long, action = ArgAction::SetTrue)]
    unrefined: bool,
    /// Ablation: fields take (u, v, h); trains and renders via VR only.
    #[arg(long, action = ArgAction::SetTrue)]
    uvl: bool,
    /// MLP depth; the reduced variants are the NES_s/NES_m ablations.
    #[arg(long, value_parser = parse_depth)]
    depth: Option<usize>,
    /// Also write intermediate checkpoints every N steps.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(clap::Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Pose index within the split.
    #[arg(long)]
    pose: Option<usize>,
    /// Scene camera index.
    #[arg(long)]
    camera: Option<usize>,
    /// Texel-space RGBA mask PNG routed through texture editing (rr only).
    #[arg(long)]
    edit: Option<PathBuf>,
    /// Output PNG path.
    #[arg(long)]
    out: PathBuf,
    /// Stratified-sampling seed (vr only).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<BothModeArg>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long, alias = "reps", value_parser = clap::value_parser!(u64).range(1..))]
    repetitions: Option<u64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    camera: Option<usize>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    #[arg(long)]
    pose: Option<usize>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<BothModeArg>,
    #[arg(long, value_enum)]
    split: Option<BothSplitArg>,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TemplateArg {
    Sphere,
    Capsule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Vr,
    Rr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BothModeArg {
    Vr,
    Rr,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Unseen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BothSplitArg {
    Train,
    Unseen,
    Both,
}

impl From<ModeArg> for RenderMode {
    fn from(m: ModeArg) -> RenderMode {
        match m {
            ModeArg::Vr => RenderMode::Vr,
            ModeArg::Rr => RenderMode::Rr,
        }
    }
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::TrainPose,
            SplitArg::Unseen => Split::UnseenPose,
        }
    }
}

fn parse_depth(s: &str) -> Result<usize, String> {
    let d: usize = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if [12, 6, 3].contains(&d) {
        Ok(d)
    } else {
        Err(format!("depth must be 12, 6, or 3, got {d}"))
    }
}

/// Errors split by exit code.
enum RunError {
    Usage(String),
    Runtime(Error),
}

impl<E: Into<Error>> From<E> for RunError {
    fn from(e: E) -> RunError {
        RunError::Runtime(e.into())
    }
}

type RunResult<T> = Result<T, RunError>;

fn usage(msg: impl Into<String>) -> RunError {
    RunError::Usage(msg.into())
}

/// Parsed `--config` overlay with unknown-key detection.
struct Overlay {
    path: String,
    map: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl Overlay {
    fn load(path: Option<&Path>) -> RunResult<Overlay> {
        let mut map = BTreeMap::new();
        let mut name = String::new();
        if let Some(path) = path {
            name = path.display().to_string();
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(usage(format!("{name}:{}: expected `key = value`", idx + 1)));
                };
                let key = k.trim().replace('-', "_");
                if map.insert(key.clone(), v.trim().to_string()).is_some() {
                    return Err(usage(format!("{name}:{}: duplicate key `{key}`", idx + 1)));
                }
            }
        }
        Ok(Overlay { path: name, map, used: BTreeSet::new() })
    }

    fn get<T: FromStr>(&mut self, key: &str) -> RunResult<Option<T>>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| usage(format!("{}: key `{key}`: {e}", self.path))),
        }
    }

    fn get_enum<T: ValueEnum>(&mut self, key: &str) -> RunResult<Option<T>> {
        self.used.insert(key.to_string());
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => T::from_str(v, true)
                .map(Some)
                .map_err(|e| usage(format!("{}: key `{key}`: {e}", self.path))),
        }
    }

    /// Reject keys the active subcommand never consulted.
    fn finish(&self) -> RunResult<()> {
        let unknown: Vec<&str> = self
            .map
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            return Ok(());
        }
        let valid: Vec<&str> = self.used.iter().map(String::as_str).collect();
        Err(usage(format!(
            "{}: unknown key(s) {}; valid keys here: {}",
            self.path,
            unknown.join(", "),
            valid.join(", ")
        )))
    }
}

/// `flag.or(config).unwrap_or(default)`, marking the key as consulted.
fn pick<T: FromStr>(flag: Option<T>, ov: &mut Overlay, key: &str, default: T) -> RunResult<T>
where
    T::Err: Display,
{
    let cfg = ov.get(key)?;
    Ok(flag.or(cfg).unwrap_or(default))
}

fn pick_flag(flag: bool, ov: &mut Overlay, key: &str) -> RunResult<bool> {
    Ok(flag || ov.get::<bool>(key)?.unwrap_or(false))
}

fn log_config(command: &str, entries: &[(&str, String)]) {
    let body: Vec<String> = entries.iter().map(|(k, v)| format!("{k} = {v}")).collect();
    eprintln!("nes {command}: {}", body.join(", "));
}

/// Entry point for the `nes` binary; returns the process exit code.
pub fn run<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let argv = std::iter::once("nes".to_string()).chain(args);
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(RunError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(RunError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: Cli) -> RunResult<()> {
    let threads = match cli.threads {
        Some(n) => Some(n as usize),
        None => match std::env::var("NES_THREADS") {
            Ok(v) => Some(
                v.parse::<usize>()
                    .ok()
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| usage(format!("NES_THREADS must be a positive integer, got `{v}`")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        // First build wins; later runs in the same process keep the pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut ov = Overlay::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(args) => cmd_synth(args, &mut ov, threads)?,
        Command::Train(args) => cmd_train(args, &mut ov, threads)?,
        Command::Render(args) => cmd_render(args, &mut ov, threads)?,
        Command::Bench(args) => cmd_bench(args, &mut ov, threads)?,
        Command::Eval(args) => cmd_eval(args, &mut ov, threads)?,
    }
    ov.finish()
}

fn threads_entry(threads: Option<usize>) -> (&'static str, String) {
    ("threads", threads.map_or_else(|| "all".into(), |n| n.to_string()))
}

fn cmd_synth(args: SynthArgs, ov: &mut Overlay, threads: Option<usize>) -> RunResult<()> {
    let d = SceneSpec::default();
    let cameras = pick(args.cameras, ov, "cameras", d.cameras as u64)? as usize;
    let poses = pick(args.poses, ov, "poses", (d.train_poses + d.unseen_poses) as u64)? as usize;
    if cameras < 1 || poses < 1 {
        return Err(usage("cameras and poses must be at least 1"));
    }
    // ceil(2N/3) train poses, remainder unseen; both nonempty when N >= 2.
    let train_poses = (2 * poses + 2) / 3;
    let spec = SceneSpec {
        template: match pick_enum(args.template, ov, "template")?.unwrap_or(TemplateArg::Sphere) {
            TemplateArg::Sphere => TemplateKind::Sphere,
            TemplateArg::Capsule => TemplateKind::Capsule,
        },
        cameras,
        train_cameras: (cameras.saturating_sub(2)).max(1),
        train_poses,
        unseen_poses: poses - train_poses,
        width: pick(args.width, ov, "width", d.width)?,
        height: pick(args.height, ov, "height", d.height)?,
        bumps: pick(args.bumps, ov, "bumps", d.bumps)?,
        tilted: pick_flag(args.tilted, ov, "tilted")?,
        pose_texture_patch: !pick_flag(args.static_texture, ov, "static_texture")?,
        seed: pick(args.seed, ov, "seed", d.seed)?,
        ..d
    };
    let force = pick_flag(args.force, ov, "force")?;
    log_config(
        "synth",
        &[
            ("out", args.out.display().to_string()),
            ("seed", spec.seed.to_string()),
            ("template", format!("{:?}", spec.template).to_lowercase()),
            ("cameras", spec.cameras.to_string()),
            ("train_cameras", spec.train_cameras.to_string()),
            ("train_poses", spec.train_poses.to_string()),
            ("unseen_poses", spec.unseen_poses.to_string()),
            ("width", spec.width.to_string()),
            ("height", spec.height.to_string()),
            ("bumps", spec.bumps.to_string()),
            ("tilted", spec.tilted.to_string()),
            ("pose_texture_patch", spec.pose_texture_patch.to_string()),
            ("force", force.to_string()),
            threads_entry(threads),
        ],
    );
    ov.finish()?;
    let (_, entries) = synth_scene(&args.out, spec, force)?;
    eprintln!("nes synth: wrote {} images under {}", entries.len(), args.out.display());
    Ok(())
}

fn pick_enum<T: ValueEnum>(flag: Option<T>, ov: &mut Overlay, key: &str) -> RunResult<Option<T>> {
    let cfg = ov.get_enum(key)?;
    Ok(flag.or(cfg))
}

fn cmd_train(args: TrainArgs, ov: &mut Overlay, threads: Option<usize>) -> RunResult<()> {
    let (scene, _) = manifest::read_manifest(&manifest_path(&args.scene))?;
    let fast = pick_flag(args.fast, ov, "fast")?;
    let scene = if fast {
        // CI scale: retarget the same scene recipe at 64x64 in memory.
        SyntheticScene::generate(SceneSpec { width: 64, height: 64, ..scene.spec })?
    } else {
        scene
    };
    let d = TrainConfig::default();
    let config = TrainConfig {
        iterations: pick(args.iterations, ov, "iterations", if fast { 4000 } else { d.iterations })?,
        batch_pixels: pick(args.batch_pixels, ov, "batch_pixels", d.batch_pixels)?,
        lr: pick(args.lr, ov, "lr", d.lr)?,
        seed: pick(args.seed, ov, "seed", d.seed)?,
        fixed_texture: pick_flag(args.fixed_texture, ov, "fixed_texture")?,
        fixed_geometry: pick_flag(args.fixed_geometry, ov, "fixed_geometry")?,
        unrefined: pick_flag(args.unrefined, ov, "unrefined")?,
        uvl: pick_flag(args.uvl, ov, "uvl")?,
        depth: pick(args.depth, ov, "depth", d.depth)?,
        width: pick(None, ov, "mlp_width", d.width)?,
        octaves: pick(None, ov, "octaves", d.octaves)?,
        hit_refresh: pick(None, ov, "hit_refresh", d.hit_refresh)?,
        ..d
    };
    if parse_depth(&config.depth.to_string()).is_err() {
        return Err(usage(format!("depth must be 12, 6, or 3, got {}", config.depth)));
    }
    let checkpoint_every =
        pick(args.checkpoint_every, ov, "checkpoint_every", config.iterations.max(1))?;
    if config.iterations < 1 || config.batch_pixels < 1 || checkpoint_every < 1 {
        return Err(usage("iterations, batch-pixels, and checkpoint-every must be at least 1"));
    }
    log_config(
        "train",
        &[
            ("scene", args.scene.display().to_string()),
            ("out", args.out.display().to_string()),
            ("fast", fast.to_string()),
            ("iterations", config.iterations.to_string()),
            ("batch_pixels", config.batch_pixels.to_string()),
            ("lr", format!("{:?}", config.lr)),
            ("seed", config.seed.to_string()),
            ("fixed_texture", config.fixed_texture.to_string()),
            ("fixed_geometry", config.fixed_geometry.to_string()),
            ("unrefined", config.unrefined.to_string()),
            ("uvl", config.uvl.to_string()),
            ("depth", config.depth.to_string()),
            ("mlp_width", config.width.to_string()),
            ("octaves", config.octaves.to_string()),
            ("checkpoint_every", checkpoint_every.to_string()),
            threads_entry(threads),
        ],
    );
    ov.finish()?;
    let start = std::time::Instant::now();
    let artifacts =
        train_with_artifacts(&scene, &config, &args.out, checkpoint_every, |line| {
            eprintln!("nes train: {line}");
        })?;
    let final_loss = artifacts.outcome.loss_history.last().copied().unwrap_or(f64::NAN);
    eprintln!(
        "nes train: done in {:.0}s, final loss {:.6}, beta {:.4}, checkpoint {}",
        start.elapsed().as_secs_f64(),
        final_loss,
        artifacts.outcome.model.beta(),
        artifacts.checkpoint.display()
    );
    Ok(())
}

fn load_pair(
    checkpoint: &Path,
    scene_dir: &Path,
) -> RunResult<(nes_core::fields::FieldModel, SyntheticScene)> {
    let model = checkpoint::load_model(checkpoint)?;
    let (scene, _) = manifest::read_manifest(&manifest_path(scene_dir))?;
    if model.config().d_pose != scene.spec.d_pose {
        return Err(RunError::Runtime(Error::invalid(format!(
            "checkpoint pose dimension {} does not match the scene's {}",
            model.config().d_pose,
            scene.spec.d_pose
        ))));
    }
    Ok((model, scene))
}

fn split_poses(scene: &SyntheticScene, split: Split) -> &[Vec<f64>] {
    match split {
        Split::TrainPose => &scene.poses_train,
        Split::UnseenPose => &scene.poses_unseen,
    }
}

fn cmd_render(args: RenderArgs, ov: &mut Overlay, threads: Option<usize>) -> RunResult<()> {
    let mode: RenderMode =
        pick_enum(args.mode, ov, "mode")?.map_or(RenderMode::Rr, ModeArg::into);
    let split: Split = pick_enum(args.split, ov, "split")?.map_or(Split::TrainPose, SplitArg::into);
    let pose_idx = pick(args.pose, ov, "pose", 0)?;
    let cam_idx = pick(args.camera, ov, "camera", 0)?;
    let seed = pick(args.seed, ov, "seed", 0)?;
    let edit = args.edit.clone();
    if edit.is_some() && mode != RenderMode::Rr {
        return Err(usage("--edit applies to the texture map and requires --mode rr"));
    }
    log_config(
        "render",
        &[
            ("checkpoint", args.checkpoint.display().to_string()),
            ("scene", args.scene.display().to_string()),
            ("mode", mode_tag(mode).into()),
            ("split", split_tag(split).into()),
            ("pose", pose_idx.to_string()),
            ("camera", cam_idx.to_string()),
            ("edit", edit.as_ref().map_or("none".into(), |p| p.display().to_string())),
            ("out", args.out.display().to_string()),
            ("seed", seed.to_string()),
            threads_entry(threads),
        ],
    );
    ov.finish()?;
    let (model, scene) = load_pair(&args.checkpoint, &args.scene)?;
    let poses = split_poses(&scene, split);
    let pose = poses
        .get(pose_idx)
        .ok_or_else(|| usage(format!("pose index {pose_idx} out of range ({} poses)", poses.len())))?;
    let camera = scene
        .cameras
        .get(cam_idx)
        .ok_or_else(|| usage(format!("camera index {cam_idx} out of range ({} cameras)", scene.cameras.len())))?;
    let img = match &edit {
        Some(mask_path) => {
            let mask = load_mask(mask_path)?;
            nes_core::raster::edit_texture(&scene.template, &model, pose, camera, &mask)?.0
        }
        None => render_frame(&scene.template, &model, pose, camera, mode, seed)?,
    };
    save_png(&args.out, &img, camera.width, camera.height)?;
    eprintln!("nes render: wrote {}", args.out.display());
    Ok(())
}

/// Scene camera rescaled to the requested resolution (same field of view).
fn camera_at(scene: &SyntheticScene, idx: usize, width: u32, height: u32) -> RunResult<Camera> {
    let c = scene
        .cameras
        .get(idx)
        .ok_or_else(|| usage(format!("camera index {idx} out of range ({} cameras)", scene.cameras.len())))?;
    let sx = width as f64 / c.width as f64;
    let sy = height as f64 / c.height as f64;
    Ok(Camera::new(
        c.fx * sx,
        c.fy * sy,
        c.cx * sx,
        c.cy * sy,
        width,
        height,
        *c.rotation(),
        c.translation(),
    )?)
}

fn cmd_bench(args: BenchArgs, ov: &mut Overlay, threads: Option<usize>) -> RunResult<()> {
    let mode = pick_enum(args.mode, ov, "mode")?.unwrap_or(BothModeArg::Both);
    let width = pick(args.width, ov, "width", 256)?;
    let height = pick(args.height, ov, "height", 256)?;
    let repetitions = pick(args.repetitions, ov, "repetitions", 100)? as usize;
    let warmup = pick(args.warmup, ov, "warmup", 3)?;
    let cam_idx = pick(args.camera, ov, "camera", 0)?;
    let split: Split = pick_enum(args.split, ov, "split")?.map_or(Split::TrainPose, SplitArg::into);
    let pose_idx = pick(args.pose, ov, "pose", 0)?;
    log_config(
        "bench",
        &[
            ("checkpoint", args.checkpoint.display().to_string()),
            ("scene", args.scene.display().to_string()),
            ("mode", format!("{mode:?}").to_lowercase()),
            ("width", width.to_string()),
            ("height", height.to_string()),
            ("repetitions", repetitions.to_string()),
            ("warmup", warmup.to_string()),
            ("camera", cam_idx.to_string()),
            ("split", split_tag(split).into()),
            ("pose", pose_idx.to_string()),
            threads_entry(threads),
        ],
    );
    ov.finish()?;
    let (model, scene) = load_pair(&args.checkpoint, &args.scene)?;
    let poses = split_poses(&scene, split);
    let pose = poses
        .get(pose_idx)
        .ok_or_else(|| usage(format!("pose index {pose_idx} out of range ({} poses)", poses.len())))?;
    let camera = camera_at(&scene, cam_idx, width, height)?;
    let modes: &[RenderMode] = match mode {
        BothModeArg::Vr => &[RenderMode::Vr],
        BothModeArg::Rr => &[RenderMode::Rr],
        BothModeArg::Both => &[RenderMode::Rr, RenderMode::Vr],
    };
    let mut rows = Vec::new();
    for &m in modes {
        eprintln!("nes bench: timing {} x{repetitions}...", mode_tag(m));
        rows.push(benchmark(&scene.template, &model, pose, &camera, m, repetitions, warmup)?);
    }
    print!("{}", bench_table(&rows));
    Ok(())
}

fn cmd_eval(args: EvalArgs, ov: &mut Overlay, threads: Option<usize>) -> RunResult<()> {
    let mode = pick_enum(args.mode, ov, "mode")?.unwrap_or(BothModeArg::Both);
    let split = pick_enum(args.split, ov, "split")?.unwrap_or(BothSplitArg::Both);
    log_config(
        "eval",
        &[
            ("checkpoint", args.checkpoint.display().to_string()),
            ("scene", args.scene.display().to_string()),
            ("mode", format!("{mode:?}").to_lowercase()),
            ("split", format!("{split:?}").to_lowercase()),
            ("out", args.out.as_ref().map_or("stdout".into(), |p| p.display().to_string())),
            threads_entry(threads),
        ],
    );
    ov.finish()?;
    let (model, scene) = load_pair(&args.checkpoint, &args.scene)?;
    let modes: &[RenderMode] = match mode {
        BothModeArg::Vr => &[RenderMode::Vr],
        BothModeArg::Rr => &[RenderMode::Rr],
        BothModeArg::Both => &[RenderMode::Rr, RenderMode::Vr],
    };
    let splits: &[Split] = match split {
        BothSplitArg::Train => &[Split::TrainPose],
        BothSplitArg::Unseen => &[Split::UnseenPose],
        BothSplitArg::Both => &[Split::TrainPose, Split::UnseenPose],
    };
    let mut reports = Vec::new();
    for &s in splits {
        for &m in modes {
            let report = evaluate_parallel(&model, &scene, s, m)?;
            eprintln!(
                "nes eval: split {} mode {}: mean psnr {:.2} dB, mean ssim {:.4}",
                split_tag(s),
                mode_tag(m),
                report.mean_psnr,
                report.mean_ssim
            );
            reports.push(report);
        }
    }
    let csv = eval_csv(&reports);
    match &args.out {
        Some(path) => {
            fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
            eprintln!("nes eval: wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
