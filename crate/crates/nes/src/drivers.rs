//! Frame-level drivers over the core pipeline: parallel full-frame
//! rendering in both modes, training with on-disk artifacts, evaluation
//! CSVs, and wall-clock benchmarks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nes_core::fields::FieldModel;
use nes_core::geometry::TemplateMesh;
use nes_core::raster::render_rr;
use nes_core::scene::SyntheticScene;
use nes_core::training::{
    evaluate_frame, train, EvalReport, EvalRow, RenderMode, Split, TrainConfig, TrainOutcome,
};
use nes_core::volren::{render_pixel_vr, slab_range, Camera, VrOptions, VrScene};
use rayon::prelude::*;

use crate::checkpoint::save_model;
use crate::error::{Error, Result};

/// Transmittance cutoff for inference-time volumetric rendering; keeps
/// frames within 1e-4 of the exact quadrature (see the core render tests).
pub const INFERENCE_TAU: f64 = 1e-6;

/// Volumetric full frame, pixel-parallel across rows. Returns RGB and the
/// accumulated opacity per pixel.
pub fn render_frame_vr(
    template: &TemplateMesh,
    model: &FieldModel,
    pose: &[f64],
    camera: &Camera,
    seed: u64,
) -> Result<(Vec<[f64; 3]>, Vec<f64>)> {
    let scene = VrScene { mesh: template, model, pose, hit_mesh: None };
    let opts = VrOptions { seed, cull_tau: Some(INFERENCE_TAU), ..VrOptions::default() };
    let rows: Vec<Vec<([f64; 3], f64)>> = (0..camera.height)
        .into_par_iter()
        .map(|py| -> Result<Vec<([f64; 3], f64)>> {
            (0..camera.width)
                .map(|px| Ok(render_pixel_vr(&scene, camera, (px, py), &opts)?))
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = camera.width as usize * camera.height as usize;
    let mut img = Vec::with_capacity(n);
    let mut opacity = Vec::with_capacity(n);
    for row in rows {
        for (rgb, op) in row {
            img.push(rgb);
            opacity.push(op);
        }
    }
    Ok((img, opacity))
}

/// Render one frame in the requested mode.
pub fn render_frame(
    template: &TemplateMesh,
    model: &FieldModel,
    pose: &[f64],
    camera: &Camera,
    mode: RenderMode,
    seed: u64,
) -> Result<Vec<[f64; 3]>> {
    match mode {
        RenderMode::Rr => Ok(render_rr(template, model, pose, camera)?.0),
        RenderMode::Vr => Ok(render_frame_vr(template, model, pose, camera, seed)?.0),
    }
}

/// Training artifacts persisted under the output directory.
pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

/// Run training, streaming progress through `log`, checkpointing every
/// `checkpoint_every` steps plus at the end, and writing the loss curve.
pub fn train_with_artifacts(
    scene: &SyntheticScene,
    config: &TrainConfig,
    out: &Path,
    checkpoint_every: usize,
    mut log: impl FnMut(String),
) -> Result<TrainArtifacts> {
    assert!(checkpoint_every >= 1);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let checkpoint = out.join("checkpoint.nesf");
    let loss_csv = out.join("loss.csv");
    let mut save_err = None;
    let outcome = train(scene, config, |e| {
        if e.step % 100 == 0 || e.step + 1 == e.iterations {
            log(format!(
                "step {}/{} loss {:.6} beta {:.4} |grad| {:.4}",
                e.step, e.iterations, e.loss, e.beta, e.grad_norm
            ));
        }
        if save_err.is_none() && (e.step + 1) % checkpoint_every == 0 && e.step + 1 < e.iterations
        {
            if let Err(err) = save_model(&out.join(format!("checkpoint_{:06}.nesf", e.step + 1)), e.model)
            {
                save_err = Some(err);
            }
        }
    })?;
    if let Some(err) = save_err {
        return Err(err);
    }
    save_model(&checkpoint, &outcome.model)?;
    let mut csv = String::from("step,loss\n");
    for (step, loss) in outcome.loss_history.iter().enumerate() {
        let _ = writeln!(csv, "{step},{loss:?}");
    }
    fs::write(&loss_csv, csv).map_err(|e| Error::io(&loss_csv, e))?;
    Ok(TrainArtifacts { outcome, checkpoint, loss_csv })
}

/// Core `evaluate`, sharded over (camera, pose) frames.
pub fn evaluate_parallel(
    model: &FieldModel,
    scene: &SyntheticScene,
    split: Split,
    mode: RenderMode,
) -> Result<EvalReport> {
    let poses = match split {
        Split::TrainPose => &scene.poses_train,
        Split::UnseenPose => &scene.poses_unseen,
    };
    if poses.is_empty() {
        // Defer to the serial path for the canonical error.
        return Ok(nes_core::training::evaluate(model, scene, split, mode)?);
    }
    let cameras = scene.holdout_camera_indices();
    if cameras.is_empty() {
        return Ok(nes_core::training::evaluate(model, scene, split, mode)?);
    }
    let jobs: Vec<(usize, usize)> = cameras
        .iter()
        .flat_map(|&c| (0..poses.len()).map(move |p| (c, p)))
        .collect();
    let rows: Vec<EvalRow> = jobs
        .par_iter()
        .map(|&(camera, pose)| -> Result<EvalRow> {
            let (psnr, ssim) = evaluate_frame(model, scene, camera, &poses[pose], mode)?;
            Ok(EvalRow { camera, pose, psnr, ssim })
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
    let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
    Ok(EvalReport { split, mode, rows, mean_psnr, mean_ssim })
}

pub fn split_tag(split: Split) -> &'static str {
    match split {
        Split::TrainPose => "train",
        Split::UnseenPose => "unseen",
    }
}

pub fn mode_tag(mode: RenderMode) -> &'static str {
    match mode {
        RenderMode::Vr => "vr",
        RenderMode::Rr => "rr",
    }
}

/// Render evaluation reports as CSV.
pub fn eval_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("split,camera,pose,mode,psnr,ssim\n");
    for report in reports {
        for row in &report.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.4},{:.6}",
                split_tag(report.split),
                row.camera,
                row.pose,
                mode_tag(report.mode),
                row.psnr,
                row.ssim
            );
        }
    }
    s
}

/// One benchmark row: wall-clock over repeated frames plus the query
/// accounting behind the efficiency claim.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub mode: RenderMode,
    pub width: u32,
    pub height: u32,
    pub repetitions: usize,
    pub mean_ms: f64,
    pub fps: f64,
    /// Pixels the mode actually shades: RR coverage, or VR slab rays.
    pub shaded_pixels: usize,
    /// Field samples per shaded pixel: the full sampling budget for VR,
    /// one for RR.
    pub samples_per_pixel: usize,
    /// Texture queries per frame: samples_per_pixel x shaded_pixels.
    pub texture_queries: usize,
    /// Rough working-set estimate (frame buffers + per-ray scratch).
    pub peak_mem_mb_estimate: f64,
}

/// Time `repetitions` frames after `warmup` unrecorded ones and report the
/// mean. VR uses the inference early-out but is accounted at the nominal
/// sampling budget.
pub fn benchmark(
    template: &TemplateMesh,
    model: &FieldModel,
    pose: &[f64],
    camera: &Camera,
    mode: RenderMode,
    repetitions: usize,
    warmup: usize,
) -> Result<BenchReport> {
    assert!(repetitions >= 1);
    let n_pixels = camera.width as usize * camera.height as usize;
    let run = || -> Result<usize> {
        match mode {
            RenderMode::Rr => Ok(render_rr(template, model, pose, camera)?.1.texture_queries),
            RenderMode::Vr => {
                render_frame_vr(template, model, pose, camera, 0)?;
                Ok(0)
            }
        }
    };
    let mut shaded = 0usize;
    for _ in 0..warmup {
        shaded = run()?;
    }
    let start = Instant::now();
    for _ in 0..repetitions {
        shaded = run()?;
    }
    let mean_ms = start.elapsed().as_secs_f64() * 1000.0 / repetitions as f64;

    let (samples_per_pixel, mem) = match mode {
        RenderMode::Rr => {
            // UvImage buffers plus the shaded frame.
            (1, n_pixels as f64 * (16.0 + 4.0 + 8.0 + 1.0 + 24.0))
        }
        RenderMode::Vr => {
            let scene = VrScene { mesh: template, model, pose, hit_mesh: None };
            let opts = VrOptions::default();
            let mut rays = 0usize;
            for py in 0..camera.height {
                for px in 0..camera.width {
                    if slab_range(&scene, camera, (px, py))?.is_some() {
                        rays += 1;
                    }
                }
            }
            shaded = rays;
            let spp = opts.n_coarse + opts.n_surface;
            // Frame buffers plus one ray's sample scratch per worker.
            let scratch = spp as f64 * 9.0 * 8.0 * rayon::current_num_threads() as f64;
            (spp, n_pixels as f64 * 32.0 + scratch)
        }
    };
    Ok(BenchReport {
        mode,
        width: camera.width,
        height: camera.height,
        repetitions,
        mean_ms,
        fps: 1000.0 / mean_ms,
        shaded_pixels: shaded,
        samples_per_pixel,
        texture_queries: samples_per_pixel * shaded,
        peak_mem_mb_estimate: (mem + model.param_count() as f64 * 8.0) / (1024.0 * 1024.0),
    })
}

/// Table-1-style text table for benchmark rows.
pub fn bench_table(rows: &[BenchReport]) -> String {
    let mut s = String::from(
        "mode  resolution  mean_ms    fps      shaded_px  samples/px  tex_queries  est_mem_mb\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<4}  {:>4}x{:<5}  {:>9.3}  {:>7.3}  {:>9}  {:>10}  {:>11}  {:>10.2}",
            mode_tag(r.mode),
            r.width,
            r.height,
            r.mean_ms,
            r.fps,
            r.shaded_pixels,
            r.samples_per_pixel,
            r.texture_queries,
            r.peak_mem_mb_estimate
        );
    }
    if rows.len() == 2 {
        let (a, b) = (&rows[0], &rows[1]);
        let (rr, vr) = if matches!(a.mode, RenderMode::Rr) { (a, b) } else { (b, a) };
        let _ = writeln!(s, "FPS(rr) / FPS(vr) = {:.1}", rr.fps / vr.fps);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use nes_core::fields::FieldConfig;
    use nes_core::scene::SceneSpec;

    fn small() -> (SyntheticScene, FieldModel) {
        let scene = SyntheticScene::generate(SceneSpec {
            level: 2,
            cameras: 3,
            train_cameras: 2,
            train_poses: 2,
            unseen_poses: 1,
            d_pose: 3,
            width: 24,
            height: 24,
            ..SceneSpec::default()
        })
        .unwrap();
        let config = FieldConfig { octaves: 2, width: 6, depth: 2, d_pose: 3, ..FieldConfig::default() };
        let model = FieldModel::new(config, 9);
        (scene, model)
    }

    #[test]
    fn parallel_vr_frame_matches_serial_pixels() {
        let (scene, model) = small();
        let camera = &scene.cameras[0];
        let pose = &scene.poses_train[0];
        let (img, opacity) =
            render_frame_vr(&scene.template, &model, pose, camera, 5).unwrap();
        let vr = VrScene { mesh: &scene.template, model: &model, pose, hit_mesh: None };
        let opts = VrOptions { seed: 5, cull_tau: Some(INFERENCE_TAU), ..VrOptions::default() };
        for &(px, py) in &[(0u32, 0u32), (12, 11), (23, 23), (7, 16)] {
            let (rgb, op) = render_pixel_vr(&vr, camera, (px, py), &opts).unwrap();
            let i = (py * camera.width + px) as usize;
            assert_eq!(img[i], rgb);
            assert_eq!(opacity[i], op);
        }
    }

    #[test]
    fn single_repetition_benchmark_times_one_frame() {
        let (scene, model) = small();
        let r = benchmark(
            &scene.template,
            &model,
            &scene.poses_train[0],
            &scene.cameras[0],
            RenderMode::Rr,
            1,
            0,
        )
        .unwrap();
        assert_eq!(r.repetitions, 1);
        assert!(r.mean_ms > 0.0 && r.fps > 0.0);
        assert_eq!(r.samples_per_pixel, 1);
        assert_eq!(r.texture_queries, r.shaded_pixels);
        assert!(r.shaded_pixels > 0);
    }

    #[test]
    fn vr_benchmark_accounts_the_nominal_sampling_budget() {
        let (scene, model) = small();
        let r = benchmark(
            &scene.template,
            &model,
            &scene.poses_train[0],
            &scene.cameras[0],
            RenderMode::Vr,
            1,
            0,
        )
        .unwrap();
        assert_eq!(r.samples_per_pixel, 144);
        assert!(r.shaded_pixels > 0);
        assert_eq!(r.texture_queries, 144 * r.shaded_pixels);
        let table = bench_table(&[r]);
        assert!(table.starts_with("mode  resolution"));
    }

    #[test]
    fn eval_csv_has_the_exact_schema() {
        let (scene, model) = small();
        let report = evaluate_parallel(&model, &scene, Split::TrainPose, RenderMode::Rr).unwrap();
        let serial = nes_core::training::evaluate(&model, &scene, Split::TrainPose, RenderMode::Rr)
            .unwrap();
        assert_eq!(report.rows.len(), serial.rows.len());
        for (a, b) in report.rows.iter().zip(&serial.rows) {
            assert_eq!((a.camera, a.pose), (b.camera, b.pose));
            assert_eq!(a.psnr, b.psnr);
            assert_eq!(a.ssim, b.ssim);
        }
        let csv = eval_csv(&[report]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("split,camera,pose,mode,psnr,ssim"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("train,"), "{row}");
        assert_eq!(row.split(',').count(), 6);
    }

    #[test]
    fn training_artifacts_land_on_disk() {
        let (scene, _) = small();
        let dir = tempfile::tempdir().unwrap();
        let config = TrainConfig {
            iterations: 4,
            batch_pixels: 2,
            octaves: 2,
            width: 6,
            depth: 2,
            ..TrainConfig::default()
        };
        let mut logs = Vec::new();
        let art =
            train_with_artifacts(&scene, &config, dir.path(), 2, |l| logs.push(l)).unwrap();
        assert!(art.checkpoint.is_file());
        assert!(dir.path().join("checkpoint_000002.nesf").is_file());
        assert!(!logs.is_empty());
        let csv = fs::read_to_string(&art.loss_csv).unwrap();
        assert!(csv.starts_with("step,loss\n"));
        assert_eq!(csv.lines().count(), 1 + config.iterations);
        let back = crate::checkpoint::load_model(&art.checkpoint).unwrap();
        assert_eq!(back.params(), art.outcome.model.params());
    }
}
