//! Training: Adam optimizer, the batched photometric-loss step loop over a
//! synthetic scene, and evaluation (PSNR/SSIM splits, offset recovery).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::fields::{FieldConfig, FieldError, FieldEval, FieldModel};
use crate::geometry::DeformedMesh;
#[cfg_attr(feature = "std", allow(unused_imports))]
use crate::math::FloatMath;
use crate::metrics::{masked_mse, psnr_from_mse, ssim_rgb, PSNR_CAP};
use crate::raster::{deform_for_pose, rasterize, shade, RasterError};
use crate::scene::SyntheticScene;
use crate::volren::{
    prepare_ray, render_pixel_vr, traced_ray_loss, VolrenError, VrOptions, VrScene,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite gradient at parameter {name} (index {index})")]
    NonFiniteGradient { index: usize, name: String },
    #[error("non-finite loss at step {step} (beta {beta}, gradient norm {grad_norm})")]
    NonFiniteLoss { step: u64, beta: f64, grad_norm: f64 },
    #[error("{what} split is empty")]
    EmptySplit { what: &'static str },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Volren(#[from] VolrenError),
}

/// Standard Adam with bias correction (β1 = 0.9, β2 = 0.999, ε = 1e-8).
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    b1t: f64,
    b2t: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            b1t: 1.0,
            b2t: 1.0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update in place. Rejects non-finite gradients; the caller supplies
    /// parameter names via `namer` for the error message.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        namer: impl Fn(usize) -> String,
    ) -> Result<(), TrainError> {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(TrainError::NonFiniteGradient { index: i, name: namer(i) });
            }
        }
        self.t += 1;
        self.b1t *= self.beta1;
        self.b2t *= self.beta2;
        let bc1 = 1.0 - self.b1t;
        let bc2 = 1.0 - self.b2t;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Training knobs. Batch composition follows the masked-supervision policy:
/// `covered_fraction` of each batch from ground-truth-covered pixels, the
/// rest from background pixels whose rays still graze the sampling slab.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_pixels: usize,
    pub lr: f64,
    pub seed: u64,
    /// Ablation: texture field loses its pose input.
    pub fixed_texture: bool,
    /// Ablation: offset field loses its pose input.
    pub fixed_geometry: bool,
    /// Ablation: drop the tilt correction from the distance conversion.
    pub unrefined: bool,
    /// Ablation: fields take (u, v, h) instead of (u, v).
    pub uvl: bool,
    pub depth: usize,
    pub width: usize,
    pub octaves: usize,
    pub n_coarse: usize,
    pub n_surface: usize,
    pub max_offset: f64,
    /// Skip far-plateau samples when preparing rays (loss error <= ~1e-5).
    pub band_skip: bool,
    /// Rebuild the deformed window-placement meshes every this many steps.
    pub hit_refresh: usize,
    pub covered_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            iterations: 20_000,
            batch_pixels: 24,
            lr: 5e-3,
            seed: 0,
            fixed_texture: false,
            fixed_geometry: false,
            unrefined: false,
            uvl: false,
            depth: 12,
            width: 16,
            octaves: 6,
            n_coarse: 128,
            n_surface: 16,
            max_offset: 0.5,
            band_skip: true,
            hit_refresh: 250,
            covered_fraction: 0.8,
        }
    }
}

impl TrainConfig {
    /// Step-size multiplier: constant through the first half, cosine decay
    /// to a 5% floor over the second. Small batches never stop jittering
    /// under a constant rate, which caps how far the fields converge.
    pub fn lr_scale(&self, step: usize) -> f64 {
        let half = self.iterations / 2;
        if step < half || self.iterations < 2 {
            return 1.0;
        }
        let t = (step - half) as f64 / (self.iterations - half) as f64;
        let floor = 0.05;
        floor + (1.0 - floor) * 0.5 * (1.0 + (core::f64::consts::PI * t).cos())
    }

    pub fn field_config(&self, d_pose: usize) -> FieldConfig {
        FieldConfig {
            octaves: self.octaves,
            width: self.width,
            depth: self.depth,
            d_pose,
            max_offset: self.max_offset,
            pose_offset: !self.fixed_geometry,
            pose_texture: !self.fixed_texture,
            refined: !self.unrefined,
            uvl: self.uvl,
        }
    }
}

/// Progress snapshot passed to the observer after every step. Carries the
/// current model so callers can persist periodic checkpoints.
pub struct TrainEvent<'a> {
    pub step: usize,
    pub iterations: usize,
    pub loss: f64,
    pub beta: f64,
    pub grad_norm: f64,
    pub model: &'a FieldModel,
}

pub struct TrainOutcome {
    pub model: FieldModel,
    pub loss_history: Vec<f64>,
}

/// One training (camera, pose) pair with its ground-truth frame and the two
/// pixel pools batches draw from.
struct TrainView {
    cam: usize,
    pose: usize,
    gt: Vec<[f64; 3]>,
    covered: Vec<u32>,
    background: Vec<u32>,
}

fn build_views(scene: &SyntheticScene, margin: f64) -> Vec<TrainView> {
    let (center, radius) = scene.template.bounding_sphere();
    let r2 = (radius + margin) * (radius + margin);
    let mut views = Vec::new();
    for &cam in &scene.train_camera_indices {
        let camera = &scene.cameras[cam];
        for (pose_idx, pose) in scene.poses_train.iter().enumerate() {
            let (gt, mask) = scene.render_gt(camera, pose);
            let mut covered = Vec::new();
            let mut background = Vec::new();
            for py in 0..camera.height {
                for px in 0..camera.width {
                    let i = (py * camera.width + px) as usize;
                    if mask[i] {
                        covered.push(i as u32);
                        continue;
                    }
                    // Background pixels matter only where a ray can pick up
                    // density, i.e. inside the inflated bounding sphere.
                    let ray = camera.ray_for_pixel(px, py).expect("pixel in range");
                    let oc = center - ray.origin;
                    let tb = oc.dot(ray.dir);
                    if tb > 0.0 && oc.length_sq() - tb * tb <= r2 {
                        background.push(i as u32);
                    }
                }
            }
            views.push(TrainView { cam, pose: pose_idx, gt, covered, background });
        }
    }
    views
}

fn hit_meshes_for(
    scene: &SyntheticScene,
    model: &FieldModel,
) -> Result<Vec<DeformedMesh>, TrainError> {
    scene
        .poses_train
        .iter()
        .map(|pose| Ok(deform_for_pose(&scene.template, model, pose)?.0))
        .collect()
}

/// Optimize a fresh model against the scene's training views by volumetric
/// rendering: per step, a pixel batch is sampled across (camera, pose)
/// pairs, each ray's color is composited from the traced fields, and the
/// mean squared error against the ground-truth pixels is backpropagated.
pub fn train(
    scene: &SyntheticScene,
    config: &TrainConfig,
    mut observer: impl FnMut(&TrainEvent),
) -> Result<TrainOutcome, TrainError> {
    assert!(config.iterations >= 1 && config.batch_pixels >= 1 && config.hit_refresh >= 1);
    assert!((0.0..=1.0).contains(&config.covered_fraction));
    let mut model = FieldModel::new(config.field_config(scene.spec.d_pose), config.seed);
    let margin = config.max_offset + 12.0 * model.beta();
    let views = build_views(scene, margin);
    assert!(
        views.iter().any(|v| !v.covered.is_empty()),
        "training cameras never see the surface"
    );

    let n_cov = ((config.covered_fraction * config.batch_pixels as f64).round() as usize)
        .min(config.batch_pixels);
    let mut hit_meshes = hit_meshes_for(scene, &model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xb5ad_4ece_da1c_e2a9);
    let mut tape = Tape::new();
    let mut grads = vec![0.0; model.param_count()];
    let mut adam = Adam::new(model.param_count(), config.lr);
    let mut history = Vec::with_capacity(config.iterations);

    for step in 0..config.iterations {
        if step > 0 && step % config.hit_refresh == 0 {
            hit_meshes = hit_meshes_for(scene, &model)?;
        }
        // Fresh strata each step, still a pure function of (config, step).
        let opts = VrOptions {
            n_coarse: config.n_coarse,
            n_surface: config.n_surface,
            seed: config.seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            cull_tau: None,
        };
        let scale = 1.0 / (3.0 * config.batch_pixels as f64);
        grads.fill(0.0);
        let mut loss = 0.0;
        for b in 0..config.batch_pixels {
            let view = &views[rng.gen_range(0..views.len())];
            let mut pool = if b < n_cov { &view.covered } else { &view.background };
            if pool.is_empty() {
                pool = if b < n_cov { &view.background } else { &view.covered };
            }
            if pool.is_empty() {
                continue;
            }
            let idx = pool[rng.gen_range(0..pool.len())] as usize;
            let camera = &scene.cameras[view.cam];
            let pixel = (idx as u32 % camera.width, idx as u32 / camera.width);
            let pose = &scene.poses_train[view.pose];
            let vr = VrScene {
                mesh: &scene.template,
                model: &model,
                pose,
                hit_mesh: Some(&hit_meshes[view.pose]),
            };
            let gt = view.gt[idx];
            let Some(prep) = prepare_ray(&vr, camera, pixel, &opts, config.band_skip)? else {
                continue; // ray misses the slab: black against black background
            };
            if prep.texels.is_empty() {
                // Entire ray out of band: renders black with zero gradient.
                loss += scale * (gt[0] * gt[0] + gt[1] * gt[1] + gt[2] * gt[2]);
                continue;
            }
            tape.clear();
            let bound = model.bind(&mut tape);
            let lv = traced_ray_loss(&mut tape, &model, &bound, &prep, pose, gt, scale)?;
            tape.backward(lv);
            loss += tape.value(lv)[0];
            model.accumulate_grads(&tape, &bound, &mut grads);
        }
        let grad_norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { step: step as u64, beta: model.beta(), grad_norm });
        }
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient { index: bad, name: model.param_name(bad) });
        }
        adam.lr = config.lr * config.lr_scale(step);
        adam.step(model.params_mut(), &grads, |i| alloc::format!("{i}"))?;
        history.push(loss);
        observer(&TrainEvent {
            step,
            iterations: config.iterations,
            loss,
            beta: model.beta(),
            grad_norm,
            model: &model,
        });
    }
    Ok(TrainOutcome { model, loss_history: history })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    TrainPose,
    UnseenPose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Vr,
    Rr,
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub camera: usize,
    /// Pose index within its split.
    pub pose: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub split: Split,
    pub mode: RenderMode,
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Render one frame with the model and score it against the ground truth.
/// PSNR is masked to the union of ground-truth and predicted coverage;
/// SSIM runs over the full frame (both backgrounds are black).
pub fn evaluate_frame(
    model: &FieldModel,
    scene: &SyntheticScene,
    camera_index: usize,
    pose: &[f64],
    mode: RenderMode,
) -> Result<(f64, f64), TrainError> {
    let camera = &scene.cameras[camera_index];
    let (gt, gt_mask) = scene.render_gt(camera, pose);
    let (img, mask) = match mode {
        RenderMode::Rr => {
            if model.config().uvl {
                return Err(RasterError::UvlUnsupported.into());
            }
            let (deformed, _) = deform_for_pose(&scene.template, model, pose)?;
            let uv = rasterize(&deformed, camera);
            let (img, _) = shade(&uv, model, pose)?;
            let covered = uv.buffers().3.to_vec();
            (img, covered)
        }
        RenderMode::Vr => {
            let vr = VrScene { mesh: &scene.template, model, pose, hit_mesh: None };
            let opts = VrOptions { cull_tau: Some(1e-6), ..VrOptions::default() };
            let n = camera.width as usize * camera.height as usize;
            let mut img = vec![[0.0; 3]; n];
            let mut mask = vec![false; n];
            for py in 0..camera.height {
                for px in 0..camera.width {
                    let (rgb, opacity) = render_pixel_vr(&vr, camera, (px, py), &opts)?;
                    let i = (py * camera.width + px) as usize;
                    img[i] = rgb;
                    mask[i] = opacity > 0.5;
                }
            }
            (img, mask)
        }
    };
    let union: Vec<bool> = mask.iter().zip(&gt_mask).map(|(a, b)| *a || *b).collect();
    let psnr = masked_mse(&img, &gt, &union).map_or(PSNR_CAP, psnr_from_mse);
    let ssim = ssim_rgb(&img, &gt, camera.width as usize, camera.height as usize);
    Ok((psnr, ssim))
}

/// Score the model on held-out cameras over one pose split.
pub fn evaluate(
    model: &FieldModel,
    scene: &SyntheticScene,
    split: Split,
    mode: RenderMode,
) -> Result<EvalReport, TrainError> {
    let poses = match split {
        Split::TrainPose => &scene.poses_train,
        Split::UnseenPose => &scene.poses_unseen,
    };
    if poses.is_empty() {
        return Err(TrainError::EmptySplit {
            what: match split {
                Split::TrainPose => "train-pose",
                Split::UnseenPose => "unseen-pose",
            },
        });
    }
    let cameras = scene.holdout_camera_indices();
    if cameras.is_empty() {
        return Err(TrainError::EmptySplit { what: "held-out camera" });
    }
    let mut rows = Vec::new();
    for &camera in &cameras {
        for (pose_idx, pose) in poses.iter().enumerate() {
            let (psnr, ssim) = evaluate_frame(model, scene, camera, pose, mode)?;
            rows.push(EvalRow { camera, pose: pose_idx, psnr, ssim });
        }
    }
    let n = rows.len() as f64;
    let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
    let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
    Ok(EvalReport { split, mode, rows, mean_psnr, mean_ssim })
}

/// Mean |l - l*| over a texel grid and the train poses: how well the offset
/// field recovered the ground-truth geometry.
pub fn offset_mae(
    model: &FieldModel,
    scene: &SyntheticScene,
    grid: usize,
) -> Result<f64, TrainError> {
    assert!(grid >= 1);
    let mut texels = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        for gx in 0..grid {
            texels.push([(gx as f64 + 0.5) / grid as f64, (gy as f64 + 0.5) / grid as f64]);
        }
    }
    let hs = vec![0.0; texels.len()];
    let mut ev = FieldEval::new();
    let mut ls = Vec::new();
    let mut sum = 0.0;
    for pose in &scene.poses_train {
        ev.offsets(model, &texels, &hs, pose, &mut ls)?;
        for (t, l) in texels.iter().zip(&ls) {
            sum += (l - scene.gt_offset(*t, pose)).abs();
        }
    }
    Ok(sum / (texels.len() * scene.poses_train.len()) as f64)
}
