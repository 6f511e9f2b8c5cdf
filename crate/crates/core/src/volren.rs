//! Training-time volumetric renderer: pinhole rays, the 128+16 sampling
//! strategy, and Eq. 2 quadrature compositing, with traced twins for
//! backpropagation.
//!
//! The untraced and traced pipelines share kernels and operation order, so a
//! pixel rendered inference-style and the forward value of the traced loss
//! agree bitwise (when the training band skip is disabled). Sampling is
//! frozen before tracing: sample positions, projections, and face metrics
//! are constants of the loss, which keeps finite differences well defined.
//!
//! Camera convention: x right, y down, z forward; world-to-camera rigid
//! transform x_cam = R x_world + t.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::conversion::{density, signed_distance, traced_density, traced_refined_distance};
use crate::fields::{Bound, FieldError, FieldEval, FieldModel};
use crate::geometry::{DeformedMesh, Ray, TemplateMesh};
use crate::math::{vec3, Mat3, Vec3};
#[cfg_attr(feature = "std", allow(unused_imports))]
use crate::math::FloatMath;

#[derive(Debug, thiserror::Error)]
pub enum VolrenError {
    #[error("pixel ({px}, {py}) outside {width}x{height}")]
    PixelOutOfBounds { px: u32, py: u32, width: u32, height: u32 },
    #[error("camera rotation is not special orthogonal (deviation {dev})")]
    BadRotation { dev: f64 },
    #[error("focal lengths must be positive, got ({fx}, {fy})")]
    BadFocal { fx: f64, fy: f64 },
    #[error("sampling needs near < far, got [{near}, {far}]")]
    EmptyRange { near: f64, far: f64 },
    #[error("composite lengths differ: {colors} colors, {densities} densities, {deltas} deltas")]
    LengthMismatch { colors: usize, densities: usize, deltas: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Pinhole camera with y-down image coordinates.
#[derive(Debug, Clone)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    rot: Mat3,
    trans: Vec3,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        rot: Mat3,
        trans: Vec3,
    ) -> Result<Camera, VolrenError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(VolrenError::BadFocal { fx, fy });
        }
        // Rows must be orthonormal and right-handed.
        let r = [rot.row(0), rot.row(1), rot.row(2)];
        let mut dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((r[i].dot(r[j]) - want).abs());
            }
        }
        dev = dev.max((r[0].cross(r[1]) - r[2]).length());
        if dev > 1e-9 {
            return Err(VolrenError::BadRotation { dev });
        }
        Ok(Camera { fx, fy, cx, cy, width, height, rot, trans })
    }

    /// Camera at `eye` looking at `target`, world `up` fixing roll.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: u32,
        height: u32,
    ) -> Result<Camera, VolrenError> {
        let forward = (target - eye).normalized();
        let right = forward.cross(up).normalized();
        let down = forward.cross(right);
        let rot = Mat3::from_rows(right, down, forward);
        let trans = -rot.mul_vec(eye);
        Camera::new(
            focal,
            focal,
            width as f64 * 0.5,
            height as f64 * 0.5,
            width,
            height,
            rot,
            trans,
        )
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rot
    }

    pub fn translation(&self) -> Vec3 {
        self.trans
    }

    /// Camera center in world space.
    pub fn position(&self) -> Vec3 {
        self.rot.transpose_mul_vec(-self.trans)
    }

    /// World ray through the center of pixel (px, py).
    pub fn ray_for_pixel(&self, px: u32, py: u32) -> Result<Ray, VolrenError> {
        if px >= self.width || py >= self.height {
            return Err(VolrenError::PixelOutOfBounds {
                px,
                py,
                width: self.width,
                height: self.height,
            });
        }
        let dx = (px as f64 + 0.5 - self.cx) / self.fx;
        let dy = (py as f64 + 0.5 - self.cy) / self.fy;
        let dir_cam = vec3(dx, dy, 1.0);
        let dir = self.rot.transpose_mul_vec(dir_cam).normalized();
        Ok(Ray { origin: self.position(), dir })
    }

    /// Rays through a batch of pixel centers.
    pub fn generate_rays(&self, pixels: &[(u32, u32)]) -> Result<Vec<Ray>, VolrenError> {
        pixels.iter().map(|&(px, py)| self.ray_for_pixel(px, py)).collect()
    }

    /// World point to (screen x, screen y, camera depth); None behind the
    /// camera plane.
    pub fn project(&self, x: Vec3) -> Option<(f64, f64, f64)> {
        let c = self.rot.mul_vec(x) + self.trans;
        if c.z <= 0.0 {
            return None;
        }
        Some((self.fx * (c.x / c.z) + self.cx, self.fy * (c.y / c.z) + self.cy, c.z))
    }
}

/// Where a quadrature sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSource {
    Stratified,
    SurfaceLocal,
}

/// Sorted quadrature nodes for one ray.
#[derive(Debug, Clone)]
pub struct RaySamples {
    pub ts: Vec<f64>,
    /// delta_k = t_{k+1} - t_k; the final segment is min(far - t_N, cap).
    pub deltas: Vec<f64>,
    pub sources: Vec<SampleSource>,
    /// Surface window bounds when a hit was supplied.
    pub window: Option<(f64, f64)>,
}

/// Cap on the final quadrature segment.
pub const LAST_DELTA_CAP: f64 = 0.1;

/// Stratified coarse samples over [near, far] plus a surface-local window of
/// `n_surface` samples around `hit` with half-width 4 beta, stratified half
/// below and half above the hit so the window always brackets it.
pub fn sample_ray(
    rng: &mut ChaCha8Rng,
    near: f64,
    far: f64,
    n_coarse: usize,
    n_surface: usize,
    hit: Option<f64>,
    beta: f64,
) -> Result<RaySamples, VolrenError> {
    if !(near < far) {
        return Err(VolrenError::EmptyRange { near, far });
    }
    let mut total = n_coarse + if hit.is_some() { n_surface } else { 0 };
    let mut ts: Vec<(f64, SampleSource)> = Vec::with_capacity(total);
    let span = far - near;
    for k in 0..n_coarse {
        let u: f64 = rng.gen();
        ts.push((near + span * ((k as f64 + u) / n_coarse as f64), SampleSource::Stratified));
    }
    let mut window = None;
    if let Some(t_hit) = hit {
        let w = 4.0 * beta;
        let lo = (t_hit - w).max(near);
        let hi = (t_hit + w).min(far);
        window = Some((lo, hi));
        let below = n_surface / 2;
        let above = n_surface - below;
        for k in 0..below {
            let u: f64 = rng.gen();
            ts.push((lo + (t_hit - lo) * ((k as f64 + u) / below as f64), SampleSource::SurfaceLocal));
        }
        for k in 0..above {
            let u: f64 = rng.gen();
            ts.push((t_hit + (hi - t_hit) * ((k as f64 + u) / above as f64), SampleSource::SurfaceLocal));
        }
    }
    ts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // Enforce strict increase; collisions have measure zero but would break
    // the positive-delta invariant.
    for i in 1..ts.len() {
        if ts[i].0 <= ts[i - 1].0 {
            ts[i].0 = ts[i - 1].0 + 1e-12;
        }
    }
    total = ts.len();
    let mut deltas = Vec::with_capacity(total);
    for i in 0..total {
        if i + 1 < total {
            deltas.push(ts[i + 1].0 - ts[i].0);
        } else {
            deltas.push((far - ts[i].0).min(LAST_DELTA_CAP).max(1e-12));
        }
    }
    Ok(RaySamples {
        ts: ts.iter().map(|p| p.0).collect(),
        deltas,
        sources: ts.iter().map(|p| p.1).collect(),
        window,
    })
}

/// Eq. 2 quadrature output.
#[derive(Debug, Clone)]
pub struct Composited {
    pub rgb: [f64; 3],
    pub weights: Vec<f64>,
    /// 1 - exp(-sum sigma delta): total absorbed fraction.
    pub opacity: f64,
}

/// Untraced Eq. 2: C = sum_k T_k (1 - e^{-sigma_k delta_k}) c_k with
/// T_k = e^{-sum_{m<k} sigma_m delta_m}. Mirrors [`traced_composite`].
pub fn composite(
    colors: &[[f64; 3]],
    densities: &[f64],
    deltas: &[f64],
) -> Result<Composited, VolrenError> {
    if colors.len() != densities.len() || colors.len() != deltas.len() {
        return Err(VolrenError::LengthMismatch {
            colors: colors.len(),
            densities: densities.len(),
            deltas: deltas.len(),
        });
    }
    let mut rgb = [0.0; 3];
    let mut weights = Vec::with_capacity(colors.len());
    let mut acc = 0.0;
    for k in 0..colors.len() {
        let sd = densities[k] * deltas[k];
        let t = (acc * -1.0).exp();
        let a = (sd * -1.0).exp() * -1.0 + 1.0;
        let w = t * a;
        weights.push(w);
        for c in 0..3 {
            rgb[c] += w * colors[k][c];
        }
        acc += sd;
    }
    let opacity = (acc * -1.0).exp() * -1.0 + 1.0;
    Ok(Composited { rgb, weights, opacity })
}

/// Traced Eq. 2 over [S,3] colors and [S,1] densities with constant deltas;
/// additional constant optical depth per segment (the training band skip's
/// folded-in mass) may be supplied. Returns the [1,3] pixel color.
pub fn traced_composite(
    tape: &mut Tape,
    colors: Var,
    densities: Var,
    deltas: &[f64],
    ghost_mass: Option<&[f64]>,
) -> Var {
    let rows = tape.rows(densities);
    assert_eq!(deltas.len(), rows);
    let d = tape.leaf(rows, 1, deltas);
    let mut sd = tape.mul(densities, d);
    if let Some(ghost) = ghost_mass {
        assert_eq!(ghost.len(), rows);
        let g = tape.leaf(rows, 1, ghost);
        sd = tape.add(sd, g);
    }
    let cum = tape.cumsum_exclusive(sd);
    let ncum = tape.scale(cum, -1.0);
    let t = tape.exp(ncum);
    let nsd = tape.scale(sd, -1.0);
    let e = tape.exp(nsd);
    let ne = tape.scale(e, -1.0);
    let a = tape.add_const(ne, 1.0);
    let w = tape.mul(t, a);
    tape.matmul_tn(w, colors)
}

/// Everything frozen about one training ray: quadrature nodes, template
/// projections, per-sample face metrics, and the band-skip layout. Net
/// evaluation order: `texels[i]` corresponds to the i-th in-band sample.
#[derive(Debug, Clone)]
pub struct PreparedRay {
    /// Texels of in-band samples (net evaluation set).
    pub texels: Vec<[f64; 2]>,
    /// Signed heights <x - x*, n> of in-band samples.
    pub hs: Vec<f64>,
    /// Face metric Cholesky rows of in-band samples.
    pub chols: Vec<[f64; 3]>,
    /// Quadrature deltas of in-band samples.
    pub deltas: Vec<f64>,
    /// Constant optical depth folded into each in-band segment from skipped
    /// plateau samples (deep-interior sigma is 1/beta to 6 decimal places).
    pub ghost_mass: Vec<f64>,
    /// Total sample count before the band skip (reporting).
    pub total_samples: usize,
}

/// Scene bundle for volumetric rendering: the template, the fields, and the
/// pose the fields are conditioned on. `hit_mesh` supplies the surface used
/// to place the 16-sample window (a deformed snapshot during training, the
/// template otherwise).
pub struct VrScene<'a> {
    pub mesh: &'a TemplateMesh,
    pub model: &'a FieldModel,
    pub pose: &'a [f64],
    pub hit_mesh: Option<&'a DeformedMesh>,
}

#[derive(Debug, Clone, Copy)]
pub struct VrOptions {
    pub n_coarse: usize,
    pub n_surface: usize,
    /// Sampling seed; combined with the pixel index per ray.
    pub seed: u64,
    /// Early-out transmittance threshold and band skip for the optimized
    /// path; None renders exactly.
    pub cull_tau: Option<f64>,
}

impl Default for VrOptions {
    fn default() -> VrOptions {
        VrOptions { n_coarse: 128, n_surface: 16, seed: 0, cull_tau: None }
    }
}

/// Half-width of the |h| band outside which the offset surface cannot lie
/// and the density sits on one of its plateaus.
fn band_limit(model: &FieldModel) -> f64 {
    model.config().max_offset + 12.0 * model.beta()
}

fn pixel_rng(seed: u64, px: u32, py: u32, width: u32) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(1 + px as u64 + py as u64 * width as u64)))
}

/// Near/far from the template bounding sphere inflated by max_offset;
/// None when the ray misses (background).
/// Sampling slab for a pixel's ray, or None when it misses the inflated
/// bounding volume entirely. Rays with a slab form the volumetric ray batch.
pub fn slab_range(
    scene: &VrScene,
    camera: &Camera,
    pixel: (u32, u32),
) -> Result<Option<(f64, f64)>, VolrenError> {
    let ray = camera.ray_for_pixel(pixel.0, pixel.1)?;
    Ok(ray_bounds(scene.mesh, scene.model, &ray))
}

fn ray_bounds(mesh: &TemplateMesh, model: &FieldModel, ray: &Ray) -> Option<(f64, f64)> {
    let (center, radius) = mesh.bounding_sphere();
    let r = radius + model.config().max_offset;
    let oc = ray.origin - center;
    let b = ray.dir.dot(oc);
    let disc = b * b - (oc.length_sq() - r * r);
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let (t0, t1) = (-b - sq, -b + sq);
    if t1 <= 1e-6 {
        return None;
    }
    Some((t0.max(1e-6), t1))
}

fn first_hit_t(scene: &VrScene, ray: &Ray, far: f64) -> Option<f64> {
    let hit = match scene.hit_mesh {
        Some(m) => m.first_hit(ray),
        None => scene.mesh.first_hit(ray),
    };
    hit.map(|h| h.t).filter(|&t| t < far)
}

/// Render one pixel by full volumetric quadrature: project every sample to
/// the template, evaluate both fields, convert to density, composite over a
/// black background. Returns (rgb, opacity).
///
/// With `cull_tau` set, samples with |h| outside the offset band skip the
/// network (their density is on a plateau: 0 outside, folded 1/beta mass
/// inside) and the march stops once transmittance falls below tau. The
/// approximation error is bounded by tau plus the plateau tail (~1e-5);
/// the default exact path evaluates everything.
pub fn render_pixel_vr(
    scene: &VrScene,
    camera: &Camera,
    pixel: (u32, u32),
    opts: &VrOptions,
) -> Result<([f64; 3], f64), VolrenError> {
    scene.model.config(); // pose length validated by field evals below
    let ray = camera.ray_for_pixel(pixel.0, pixel.1)?;
    let Some((near, far)) = ray_bounds(scene.mesh, scene.model, &ray) else {
        return Ok(([0.0; 3], 0.0));
    };
    let mut rng = pixel_rng(opts.seed, pixel.0, pixel.1, camera.width);
    let hit = first_hit_t(scene, &ray, far);
    let beta = scene.model.beta();
    let samples = sample_ray(&mut rng, near, far, opts.n_coarse, opts.n_surface, hit, beta)?;

    let model = scene.model;
    let refined = model.config().refined && !model.config().uvl;
    let band = band_limit(model);
    let mut ev = FieldEval::new();

    // Project all samples to the template; seed each query with the previous
    // sample's face (strong locality along a ray).
    let n = samples.ts.len();
    let mut texels = Vec::with_capacity(n);
    let mut hs = Vec::with_capacity(n);
    let mut metrics = Vec::with_capacity(n);
    let mut surfaces = Vec::with_capacity(n);
    let mut seed_face = None;
    for &t in &samples.ts {
        let x = ray.at(t);
        let sp = scene.mesh.project_seeded(x, seed_face);
        seed_face = Some(sp.face);
        texels.push(sp.texel);
        hs.push((x - sp.position).dot(sp.normal));
        metrics.push(*scene.mesh.face_metric(sp.face));
        surfaces.push(sp);
    }

    let mut colors = vec![[0.0; 3]; n];
    let mut densities = vec![0.0; n];

    if let Some(tau) = opts.cull_tau {
        // Optimized path: march with early-out, batch only in-band samples.
        let mut acc = 0.0;
        let mut last = n;
        let mut eval_idx = Vec::new();
        for k in 0..n {
            if (-acc as f64).exp() < tau {
                last = k;
                break;
            }
            if hs[k] > band {
                densities[k] = 0.0;
            } else if hs[k] < -band {
                densities[k] = density(hs[k] + model.config().max_offset, beta);
                acc += densities[k] * samples.deltas[k];
            } else {
                eval_idx.push(k);
                // Density unknown until the nets run; assume plateau for the
                // running early-out estimate (conservative: overestimates T).
                acc += 0.0;
            }
        }
        let eval_idx: Vec<usize> = eval_idx.into_iter().filter(|&k| k < last).collect();
        let sel_texels: Vec<[f64; 2]> = eval_idx.iter().map(|&k| texels[k]).collect();
        let sel_hs: Vec<f64> = eval_idx.iter().map(|&k| hs[k]).collect();
        let (mut ls, mut gus, mut gvs) = (Vec::new(), Vec::new(), Vec::new());
        if refined {
            ev.offsets_with_grad(model, &sel_texels, &sel_hs, scene.pose, &mut ls, &mut gus, &mut gvs)?;
        } else {
            ev.offsets(model, &sel_texels, &sel_hs, scene.pose, &mut ls)?;
        }
        let mut rgbs = Vec::new();
        ev.textures(model, &sel_texels, &sel_hs, scene.pose, &mut rgbs)?;
        for (i, &k) in eval_idx.iter().enumerate() {
            let grad = if refined {
                metrics[k].world_gradient([gus[i], gvs[i]])
            } else {
                [0.0, 0.0]
            };
            let conv = signed_distance(ray.at(samples.ts[k]), &surfaces[k], ls[i], grad, refined);
            densities[k] = density(conv.s, beta);
            colors[k] = rgbs[i];
        }
        let out = composite(&colors[..last], &densities[..last], &samples.deltas[..last])?;
        return Ok((out.rgb, out.opacity));
    }

    // Exact path: evaluate the nets for every sample.
    let (mut ls, mut gus, mut gvs) = (Vec::new(), Vec::new(), Vec::new());
    if refined {
        ev.offsets_with_grad(model, &texels, &hs, scene.pose, &mut ls, &mut gus, &mut gvs)?;
    } else {
        ev.offsets(model, &texels, &hs, scene.pose, &mut ls)?;
    }
    let mut rgbs = Vec::new();
    ev.textures(model, &texels, &hs, scene.pose, &mut rgbs)?;
    for k in 0..n {
        let grad = if refined {
            metrics[k].world_gradient([gus[k], gvs[k]])
        } else {
            [0.0, 0.0]
        };
        let conv = signed_distance(ray.at(samples.ts[k]), &surfaces[k], ls[k], grad, refined);
        densities[k] = density(conv.s, beta);
        colors[k] = rgbs[k];
    }
    let out = composite(&colors, &densities, &samples.deltas)?;
    Ok((out.rgb, out.opacity))
}

/// Freeze one training ray: sample, project, and split samples into the
/// in-band evaluation set and skipped plateau mass. `band_skip: false`
/// keeps every sample (exact loss, used by parity and gradient tests).
/// Returns None when the ray misses the inflated bounding sphere.
pub fn prepare_ray(
    scene: &VrScene,
    camera: &Camera,
    pixel: (u32, u32),
    opts: &VrOptions,
    band_skip: bool,
) -> Result<Option<PreparedRay>, VolrenError> {
    let ray = camera.ray_for_pixel(pixel.0, pixel.1)?;
    let Some((near, far)) = ray_bounds(scene.mesh, scene.model, &ray) else {
        return Ok(None);
    };
    let mut rng = pixel_rng(opts.seed, pixel.0, pixel.1, camera.width);
    let hit = first_hit_t(scene, &ray, far);
    let model = scene.model;
    let beta = model.beta();
    let samples = sample_ray(&mut rng, near, far, opts.n_coarse, opts.n_surface, hit, beta)?;
    let band = band_limit(model);

    let mut prep = PreparedRay {
        texels: Vec::new(),
        hs: Vec::new(),
        chols: Vec::new(),
        deltas: Vec::new(),
        ghost_mass: Vec::new(),
        total_samples: samples.ts.len(),
    };
    let mut seed_face = None;
    // Plateau mass accumulated since the last kept sample; folded into the
    // next kept segment (or dropped if none follows: transmittance there is
    // already negligible).
    let mut pending_ghost = 0.0;
    for (k, &t) in samples.ts.iter().enumerate() {
        let x = ray.at(t);
        let sp = scene.mesh.project_seeded(x, seed_face);
        seed_face = Some(sp.face);
        let h = (x - sp.position).dot(sp.normal);
        if band_skip && h > band {
            continue; // sigma = 0 plateau
        }
        if band_skip && h < -band {
            pending_ghost += density(h + model.config().max_offset, beta) * samples.deltas[k];
            continue;
        }
        prep.texels.push(sp.texel);
        prep.hs.push(h);
        prep.chols.push(scene.mesh.face_metric(sp.face).chol);
        prep.deltas.push(samples.deltas[k]);
        prep.ghost_mass.push(core::mem::take(&mut pending_ghost));
        // Ghost mass belongs *before* this sample's own segment; attributing
        // it to the previous segment index keeps the transmittance reaching
        // this sample correct, so fold it there instead when possible.
        let n = prep.ghost_mass.len();
        if n >= 2 {
            let g = prep.ghost_mass[n - 1];
            if g != 0.0 {
                prep.ghost_mass[n - 2] += g;
                prep.ghost_mass[n - 1] = 0.0;
            }
        }
    }
    Ok(Some(prep))
}

/// Traced photometric loss of one prepared ray against a ground-truth color:
/// scale * sum_c (C_c - gt_c)^2. Composes the traced field, conversion, and
/// compositing stages; all geometry is frozen in `prep`.
pub fn traced_ray_loss(
    tape: &mut Tape,
    model: &FieldModel,
    bound: &Bound,
    prep: &PreparedRay,
    pose: &[f64],
    gt: [f64; 3],
    scale: f64,
) -> Result<Var, VolrenError> {
    let s_count = prep.texels.len();
    assert!(s_count > 0, "empty prepared ray");
    let refined = model.config().refined && !model.config().uvl;
    let to = model.traced_offsets(tape, bound, &prep.texels, &prep.hs, pose, refined)?;
    let colors = model.traced_textures(tape, bound, &prep.texels, &prep.hs, pose)?;
    let beta = model.traced_beta(tape, bound);

    let h = tape.leaf(s_count, 1, &prep.hs);
    let s_prime = tape.sub(h, to.l);
    let s = if refined {
        let (gu, gv) = to.grad.expect("refined tracing requests gradients");
        traced_refined_distance(tape, s_prime, gu, gv, &prep.chols)
    } else {
        s_prime
    };
    let sigma = traced_density(tape, s, beta);
    let ghost = prep.ghost_mass.iter().any(|&g| g != 0.0).then_some(prep.ghost_mass.as_slice());
    let rgb = traced_composite(tape, colors, sigma, &prep.deltas, ghost);
    let gt_leaf = tape.leaf(1, 3, &gt);
    let d = tape.sub(rgb, gt_leaf);
    let sq = tape.mul(d, d);
    let tot = tape.sum(sq);
    Ok(tape.scale(tot, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::FieldConfig;
    use crate::geometry::templates::sphere;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn test_camera() -> Camera {
        Camera::look_at(vec3(0.0, -3.5, 0.0), Vec3::ZERO, vec3(0.0, 0.0, 1.0), 80.0, 64, 64)
            .unwrap()
    }

    #[test]
    fn principal_pixel_ray_is_optical_axis() {
        // cx = 2.5 lands on the center of pixel 2 for a 5-wide image.
        let rot = Mat3::IDENTITY;
        let cam = Camera::new(50.0, 50.0, 2.5, 3.5, 5, 7, rot, Vec3::ZERO).unwrap();
        let ray = cam.ray_for_pixel(2, 3).unwrap();
        assert!((ray.dir - vec3(0.0, 0.0, 1.0)).length() < 1e-15);
        assert!(ray.origin.length() < 1e-15);
    }

    #[test]
    fn ray_directions_are_unit_and_in_bounds_only() {
        let cam = test_camera();
        let mut pixels = Vec::new();
        for py in 0..cam.height {
            for px in 0..cam.width {
                pixels.push((px, py));
            }
        }
        let rays = cam.generate_rays(&pixels).unwrap();
        for r in &rays {
            assert!((r.dir.length() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            cam.ray_for_pixel(64, 0),
            Err(VolrenError::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn corner_ray_angle_matches_pinhole_trigonometry() {
        let (w, h, f) = (64u32, 48u32, 80.0);
        let cam = Camera::new(f, f, w as f64 / 2.0, h as f64 / 2.0, w, h, Mat3::IDENTITY, Vec3::ZERO)
            .unwrap();
        let ray = cam.ray_for_pixel(0, 0).unwrap();
        let half_diag = ((w as f64 / 2.0 - 0.5).powi(2) + (h as f64 / 2.0 - 0.5).powi(2)).sqrt();
        let want = (half_diag / f).atan2(1.0);
        let got = ray.dir.dot(vec3(0.0, 0.0, 1.0)).acos();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn camera_validation_rejects_bad_inputs() {
        let skew = Mat3::from_rows(vec3(1.0, 0.1, 0.0), vec3(0.0, 1.0, 0.0), vec3(0.0, 0.0, 1.0));
        assert!(matches!(
            Camera::new(50.0, 50.0, 1.0, 1.0, 4, 4, skew, Vec3::ZERO),
            Err(VolrenError::BadRotation { .. })
        ));
        // Left-handed frame (det -1).
        let mirrored =
            Mat3::from_rows(vec3(1.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0), vec3(0.0, 0.0, -1.0));
        assert!(Camera::new(50.0, 50.0, 1.0, 1.0, 4, 4, mirrored, Vec3::ZERO).is_err());
        assert!(matches!(
            Camera::new(0.0, 50.0, 1.0, 1.0, 4, 4, Mat3::IDENTITY, Vec3::ZERO),
            Err(VolrenError::BadFocal { .. })
        ));
    }

    #[test]
    fn sampling_counts_and_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = sample_ray(&mut rng, 1.0, 4.0, 128, 16, None, 0.1).unwrap();
        assert_eq!(s.ts.len(), 128);
        assert!(s.ts.iter().all(|&t| (1.0..4.0).contains(&t)));
        assert!(s.window.is_none());

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = sample_ray(&mut rng, 1.0, 4.0, 128, 16, Some(2.5), 0.1).unwrap();
        assert_eq!(s.ts.len(), 144);
        let (lo, hi) = s.window.unwrap();
        assert_eq!((lo, hi), (2.1, 2.9));
        let local: Vec<f64> = s
            .ts
            .iter()
            .zip(&s.sources)
            .filter(|(_, &src)| src == SampleSource::SurfaceLocal)
            .map(|(&t, _)| t)
            .collect();
        assert_eq!(local.len(), 16);
        assert!(local.iter().all(|&t| (lo..=hi).contains(&t)));
        // Window brackets the hit.
        assert!(local.iter().any(|&t| t < 2.5));
        assert!(local.iter().any(|&t| t > 2.5));

        assert!(matches!(
            sample_ray(&mut rng, 2.0, 2.0, 128, 16, None, 0.1),
            Err(VolrenError::EmptyRange { .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        let sa = sample_ray(&mut a, 0.5, 3.0, 128, 16, Some(1.7), 0.05).unwrap();
        let sb = sample_ray(&mut b, 0.5, 3.0, 128, 16, Some(1.7), 0.05).unwrap();
        assert_eq!(sa.ts, sb.ts);
        assert_eq!(sa.deltas, sb.deltas);
    }

    proptest! {
        #[test]
        fn samples_strictly_increase_with_positive_deltas(
            seed in 0u64..1000,
            near in 0.1f64..2.0,
            span in 0.5f64..4.0,
            hit_frac in 0.0f64..1.0,
            beta in 0.005f64..0.3,
        ) {
            let far = near + span;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hit = near + hit_frac * span;
            let s = sample_ray(&mut rng, near, far, 64, 16, Some(hit), beta).unwrap();
            for i in 1..s.ts.len() {
                prop_assert!(s.ts[i] > s.ts[i - 1]);
            }
            prop_assert!(s.deltas.iter().all(|&d| d > 0.0));
            prop_assert_eq!(s.deltas.len(), s.ts.len());
        }

        #[test]
        fn weights_partition_absorbed_fraction(
            sig in proptest::collection::vec(0.0f64..50.0, 1..40),
            del in proptest::collection::vec(1e-4f64..1.0, 40),
        ) {
            let n = sig.len();
            let colors = vec![[0.3, 0.5, 0.7]; n];
            let out = composite(&colors, &sig, &del[..n]).unwrap();
            prop_assert!(out.weights.iter().all(|&w| w >= 0.0));
            let total: f64 = sig.iter().zip(&del[..n]).map(|(s, d)| s * d).sum();
            let want = 1.0 - (-total).exp();
            let got: f64 = out.weights.iter().sum();
            prop_assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);
            prop_assert!((out.opacity - want).abs() < 1e-9);
        }
    }

    #[test]
    fn composite_reference_points() {
        // Empty space.
        let out = composite(&[[1.0, 1.0, 1.0]; 4], &[0.0; 4], &[0.25; 4]).unwrap();
        assert_eq!(out.rgb, [0.0, 0.0, 0.0]);
        assert_eq!(out.opacity, 0.0);

        // Opaque front sample.
        let out = composite(
            &[[0.9, 0.1, 0.2], [0.0, 1.0, 0.0]],
            &[100.0, 3.0],
            &[0.5, 0.5],
        )
        .unwrap();
        // 1.0 - 1e-20 is exactly 1.0 in f64; the weight saturates there.
        assert!(out.weights[0] >= 1.0 - 1e-20);
        assert!(out.weights[1] < 1e-20);

        // Hand-evaluated two-sample quadrature.
        let out = composite(
            &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            &[1.0, 2.0],
            &[0.5, 0.5],
        )
        .unwrap();
        let r = 1.0 - (-0.5f64).exp();
        let g = (-0.5f64).exp() * (1.0 - (-1.0f64).exp());
        assert!((out.rgb[0] - r).abs() < 1e-15);
        assert!((out.rgb[1] - g).abs() < 1e-15);
        assert_eq!(out.rgb[2], 0.0);
        assert!((out.rgb[0] - 0.3935).abs() < 1e-4);
        assert!((out.rgb[1] - 0.3834).abs() < 1e-4);

        assert!(matches!(
            composite(&[[0.0; 3]], &[0.0, 1.0], &[0.1]),
            Err(VolrenError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn zero_density_samples_do_not_change_compositing() {
        let colors = [[0.8, 0.2, 0.4], [0.1, 0.9, 0.3], [0.5, 0.5, 0.5]];
        let sig = [2.0, 1.5, 0.7];
        let del = [0.3, 0.2, 0.4];
        let base = composite(&colors, &sig, &del).unwrap();
        // Insert zero-density samples between every pair.
        let colors2 = [colors[0], [9.0; 3], colors[1], [7.0; 3], colors[2]];
        let sig2 = [sig[0], 0.0, sig[1], 0.0, sig[2]];
        let del2 = [del[0], 0.05, del[1], 0.07, del[2]];
        let ins = composite(&colors2, &sig2, &del2).unwrap();
        for c in 0..3 {
            assert!((base.rgb[c] - ins.rgb[c]).abs() < 1e-12);
        }
        assert!((base.opacity - ins.opacity).abs() < 1e-12);
    }

    #[test]
    fn traced_composite_matches_untraced_and_fd() {
        let colors = [[0.8, 0.2, 0.4], [0.1, 0.9, 0.3], [0.5, 0.5, 0.5], [0.2, 0.1, 0.7]];
        let sig = [2.0, 0.0, 1.5, 0.7];
        let del = [0.3, 0.2, 0.25, 0.4];
        let flat: Vec<f64> = colors.iter().flatten().copied().collect();

        let eval = |sv: &[f64], cv: &[f64]| -> ([f64; 3], f64) {
            let mut t = Tape::new();
            let s = t.param(4, 1, sv);
            let c = t.param(4, 3, cv);
            let rgb = traced_composite(&mut t, c, s, &del, None);
            let w = t.leaf(1, 3, &[1.0, 2.0, 3.0]);
            let m = t.mul(rgb, w);
            let loss = t.sum(m);
            let rv = tape_rgb(&t, rgb);
            (rv, t.value(loss)[0])
        };
        fn tape_rgb(t: &Tape, v: Var) -> [f64; 3] {
            let s = t.value(v);
            [s[0], s[1], s[2]]
        }

        let (rgb, _) = eval(&sig, &flat);
        let want = composite(&colors, &sig, &del).unwrap();
        assert_eq!(rgb, want.rgb);

        // FD on densities and colors through a weighted scalar.
        let mut tape = Tape::new();
        let s = tape.param(4, 1, &sig);
        let c = tape.param(4, 3, &flat);
        let rgbv = traced_composite(&mut tape, c, s, &del, None);
        let w = tape.leaf(1, 3, &[1.0, 2.0, 3.0]);
        let m = tape.mul(rgbv, w);
        let loss = tape.sum(m);
        tape.backward(loss);
        let gs = tape.grad(s).unwrap().to_vec();
        let gc = tape.grad(c).unwrap().to_vec();
        let h = 1e-6;
        for i in 0..4 {
            let mut sp = sig;
            sp[i] += h;
            let mut sm = sig;
            sm[i] -= h;
            let fd = (eval(&sp, &flat).1 - eval(&sm, &flat).1) / (2.0 * h);
            let denom = fd.abs().max(gs[i].abs()).max(1e-8);
            assert!((fd - gs[i]).abs() / denom < 1e-4);
        }
        for i in 0..12 {
            let mut cp = flat.clone();
            cp[i] += h;
            let mut cm = flat.clone();
            cm[i] -= h;
            let fd = (eval(&sig, &cp).1 - eval(&sig, &cm).1) / (2.0 * h);
            let denom = fd.abs().max(gc[i].abs()).max(1e-8);
            assert!((fd - gc[i]).abs() / denom < 1e-4);
        }
    }

    fn small_scene_model() -> FieldModel {
        let cfg = FieldConfig {
            octaves: 3,
            width: 8,
            depth: 3,
            d_pose: 2,
            max_offset: 0.3,
            ..FieldConfig::default()
        };
        let mut m = FieldModel::new(cfg, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for p in m.params_mut() {
            if *p == 0.0 {
                *p = rng.gen_range(-0.3..0.3);
            }
        }
        m.set_beta(0.1);
        m
    }

    #[test]
    fn missing_ray_is_black_and_surface_ray_is_opaque() {
        let mesh = sphere(2, 1.0).unwrap();
        let model = small_scene_model();
        let pose = [0.4, -0.2];
        let scene = VrScene { mesh: &mesh, model: &model, pose: &pose, hit_mesh: None };
        let cam = test_camera();
        let opts = VrOptions::default();
        // Corner pixel ray misses the inflated sphere.
        let (rgb, op) = render_pixel_vr(&scene, &cam, (0, 0), &opts).unwrap();
        assert_eq!(rgb, [0.0; 3]);
        assert_eq!(op, 0.0);
        // Center pixel crosses the surface.
        let (rgb, op) = render_pixel_vr(&scene, &cam, (32, 32), &opts).unwrap();
        assert!(op > 0.99, "opacity {op}");
        assert!(rgb.iter().all(|&c| c > 0.0 && c < 1.0));
        // Determinism.
        let again = render_pixel_vr(&scene, &cam, (32, 32), &opts).unwrap();
        assert_eq!(again.0, rgb);
        assert_eq!(again.1, op);
    }

    #[test]
    fn traced_loss_forward_matches_exact_render() {
        let mesh = sphere(2, 1.0).unwrap();
        let model = small_scene_model();
        let pose = [0.4, -0.2];
        let scene = VrScene { mesh: &mesh, model: &model, pose: &pose, hit_mesh: None };
        let cam = test_camera();
        let opts = VrOptions::default();
        let pixel = (30, 34);
        let (rgb, _) = render_pixel_vr(&scene, &cam, pixel, &opts).unwrap();

        let prep = prepare_ray(&scene, &cam, pixel, &opts, false).unwrap().unwrap();
        assert_eq!(prep.texels.len(), prep.total_samples);
        let gt = [0.3, 0.6, 0.1];
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let loss = traced_ray_loss(&mut tape, &model, &bound, &prep, &pose, gt, 1.0).unwrap();
        let want: f64 = rgb.iter().zip(&gt).map(|(c, g)| (c - g) * (c - g)).sum();
        assert_eq!(tape.value(loss)[0], want);
    }

    #[test]
    fn band_skip_approximates_exact_loss() {
        let mesh = sphere(2, 1.0).unwrap();
        let mut model = small_scene_model();
        model.set_beta(0.02); // sharp density so the band actually skips
        let pose = [0.4, -0.2];
        let scene = VrScene { mesh: &mesh, model: &model, pose: &pose, hit_mesh: None };
        let cam = test_camera();
        let opts = VrOptions::default();
        let gt = [0.2, 0.4, 0.6];
        // Near-center pixels: the chord dives deep below the surface, so the
        // interior plateau is actually skipped.
        for pixel in [(32, 32), (30, 30), (34, 33)] {
            let exact = prepare_ray(&scene, &cam, pixel, &opts, false).unwrap().unwrap();
            let skim = prepare_ray(&scene, &cam, pixel, &opts, true).unwrap().unwrap();
            assert!(skim.texels.len() < exact.texels.len(), "band skip kept everything");
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let le = traced_ray_loss(&mut tape, &model, &bound, &exact, &pose, gt, 1.0).unwrap();
            let lev = tape.value(le)[0];
            let mut tape2 = Tape::new();
            let bound2 = model.bind(&mut tape2);
            let ls = traced_ray_loss(&mut tape2, &model, &bound2, &skim, &pose, gt, 1.0).unwrap();
            let lsv = tape2.value(ls)[0];
            assert!((lev - lsv).abs() < 1e-5, "pixel {pixel:?}: {lev} vs {lsv}");
        }
    }

    /// Full-pipeline gradient check: photometric loss through both nets,
    /// Eq. 4, Eq. 1, and Eq. 2 versus central differences on 20 parameters.
    #[test]
    fn full_pipeline_gradients_match_fd() {
        let mesh = sphere(1, 1.0).unwrap();
        let model = small_scene_model();
        let pose = [0.4, -0.2];
        let cam = test_camera();
        let opts = VrOptions::default();
        let scene = VrScene { mesh: &mesh, model: &model, pose: &pose, hit_mesh: None };
        let prep = prepare_ray(&scene, &cam, (32, 30), &opts, false).unwrap().unwrap();
        let gt = [0.25, 0.5, 0.75];

        let loss_of = |m: &FieldModel| -> f64 {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape);
            let loss = traced_ray_loss(&mut tape, m, &bound, &prep, &pose, gt, 1.0).unwrap();
            tape.value(loss)[0]
        };

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let loss = traced_ray_loss(&mut tape, &model, &bound, &prep, &pose, gt, 1.0).unwrap();
        tape.backward(loss);
        let mut grads = vec![0.0; model.param_count()];
        model.accumulate_grads(&tape, &bound, &mut grads);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 20 {
            let i = rng.gen_range(0..model.param_count());
            let h = 1e-5 * model.params()[i].abs().max(1.0);
            let mut mp = model.clone();
            mp.params_mut()[i] += h;
            let mut mm = model.clone();
            mm.params_mut()[i] -= h;
            let fd = (loss_of(&mp) - loss_of(&mm)) / (2.0 * h);
            let g = grads[i];
            if fd.abs().max(g.abs()) < 1e-6 {
                continue; // below the FD noise floor; nothing to validate
            }
            let denom = fd.abs().max(g.abs());
            assert!(
                (fd - g).abs() / denom < 1e-4,
                "param {i} ({}): analytic {g} vs fd {fd}",
                model.param_name(i)
            );
            checked += 1;
        }
    }

    #[test]
    fn culled_render_matches_exact_closely() {
        let mesh = sphere(2, 1.0).unwrap();
        let mut model = small_scene_model();
        model.set_beta(0.03);
        let pose = [0.4, -0.2];
        let scene = VrScene { mesh: &mesh, model: &model, pose: &pose, hit_mesh: None };
        let cam = test_camera();
        let exact = VrOptions::default();
        let culled = VrOptions { cull_tau: Some(1e-6), ..VrOptions::default() };
        for pixel in [(32, 32), (20, 40), (32, 12), (0, 0)] {
            let (re, oe) = render_pixel_vr(&scene, &cam, pixel, &exact).unwrap();
            let (rc, oc) = render_pixel_vr(&scene, &cam, pixel, &culled).unwrap();
            for c in 0..3 {
                assert!((re[c] - rc[c]).abs() < 1e-4, "pixel {pixel:?} channel {c}: {re:?} vs {rc:?}");
            }
            assert!((oe - oc).abs() < 1e-4);
        }
    }

    #[test]
    fn window_position_follows_beta() {
        // Larger beta widens the surface window symmetrically.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_ray(&mut rng, 1.0, 5.0, 32, 16, Some(3.0), 0.2).unwrap();
        assert_eq!(s.window.unwrap(), (3.0 - 0.8, 3.0 + 0.8));
    }
}
