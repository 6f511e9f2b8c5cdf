//! Synthetic ground-truth scenes: analytic pose-modulated offset and texture
//! fields over a template atlas, a camera ring, and reference images
//! rendered through this crate's own rasterizer.
//!
//! Everything derives deterministically from the spec seed. Ground-truth
//! offsets are sums of smooth Gaussian bumps in embedding space (seam-safe),
//! each gated by a pose response; the texture is a soft checker plus an
//! atlas gradient and an optional pose-driven patch. A perfect model can
//! therefore reach zero loss on the rendered images.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::templates::{capsule, capsule_embedding, sphere, sphere_embedding};
use crate::geometry::{DeformedMesh, GeometryError, TemplateMesh};
use crate::math::{vec3, Vec3, TAU};
use crate::raster::{rasterize, UvImage};
use crate::volren::Camera;
#[cfg_attr(feature = "std", allow(unused_imports))]
use crate::math::FloatMath;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Sphere,
    Capsule,
}

/// Scene recipe; every derived quantity is a pure function of this.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub template: TemplateKind,
    pub level: u32,
    pub radius: f64,
    /// Capsule half-length (ignored for spheres).
    pub half_len: f64,
    pub cameras: usize,
    pub train_cameras: usize,
    pub train_poses: usize,
    pub unseen_poses: usize,
    pub d_pose: usize,
    pub width: u32,
    pub height: u32,
    pub bumps: usize,
    /// Sharp, narrow bumps exercising the tilt correction.
    pub tilted: bool,
    /// Pose-driven texture patch (off makes the texture pose-invariant).
    pub pose_texture_patch: bool,
    pub camera_distance: f64,
    /// Focal length as a multiple of image height.
    pub focal_factor: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> SceneSpec {
        SceneSpec {
            template: TemplateKind::Sphere,
            level: 4,
            radius: 1.0,
            half_len: 0.6,
            cameras: 6,
            train_cameras: 4,
            train_poses: 8,
            unseen_poses: 4,
            d_pose: 8,
            width: 128,
            height: 128,
            bumps: 3,
            tilted: false,
            pose_texture_patch: true,
            camera_distance: 3.5,
            focal_factor: 1.1,
            seed: 7,
        }
    }
}

/// One pose-gated Gaussian bump of the offset field.
#[derive(Debug, Clone)]
struct Bump {
    center: Vec3,
    amp: f64,
    sigma: f64,
    w: Vec<f64>,
    b: f64,
}

#[derive(Debug, Clone)]
struct TexPatch {
    center: Vec3,
    sigma: f64,
    w: Vec<f64>,
    b: f64,
    color: [f64; 3],
}

/// A generated scene: template, analytic fields, cameras, pose sets.
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub template: TemplateMesh,
    bumps: Vec<Bump>,
    patch: Option<TexPatch>,
    pub cameras: Vec<Camera>,
    /// Indices into `cameras` used for training; the rest are held out.
    pub train_camera_indices: Vec<usize>,
    pub poses_train: Vec<Vec<f64>>,
    pub poses_unseen: Vec<Vec<f64>>,
}

impl core::fmt::Debug for SyntheticScene {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("SyntheticScene")
            .field("spec", &self.spec)
            .field("bumps", &self.bumps.len())
            .field("cameras", &self.cameras.len())
            .finish_non_exhaustive()
    }
}

/// 0.5 + 0.5 tanh(<w, pose> + b), a smooth gate in (0, 1).
fn pose_gate(w: &[f64], b: f64, pose: &[f64]) -> f64 {
    let mut a = b;
    for (wi, pi) in w.iter().zip(pose) {
        a += wi * pi;
    }
    0.5 + 0.5 * a.tanh()
}

impl SyntheticScene {
    pub fn generate(spec: SceneSpec) -> Result<SyntheticScene, GeometryError> {
        assert!(spec.train_cameras <= spec.cameras && spec.cameras >= 1);
        assert!(spec.train_poses >= 1);
        let template = match spec.template {
            TemplateKind::Sphere => sphere(spec.level, spec.radius)?,
            TemplateKind::Capsule => capsule(spec.level, spec.radius, spec.half_len)?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

        // Bumps: rejection-sample well-separated centers on the surface so
        // overlaps stay mild and total amplitude well under the offset cap.
        let (amp_lo, amp_hi, sig_lo, sig_hi) = if spec.tilted {
            (0.10, 0.15, 0.08, 0.12)
        } else {
            (0.15, 0.22, 0.35, 0.55)
        };
        let mut bumps = Vec::with_capacity(spec.bumps);
        let mut centers: Vec<Vec3> = Vec::new();
        let mut spacing = 1.2 * spec.radius;
        let mut attempts = 0usize;
        while bumps.len() < spec.bumps {
            let t = [rng.gen_range(0.0..1.0), rng.gen_range(0.15..0.85)];
            let c = embed_kind(&spec, t);
            if centers.iter().any(|o| (*o - c).length() < spacing) {
                // Dense requests cannot satisfy the spacing; relax it rather
                // than spin (the draw sequence stays seed-deterministic).
                attempts += 1;
                if attempts % 1000 == 0 {
                    spacing *= 0.5;
                }
                continue;
            }
            centers.push(c);
            bumps.push(Bump {
                center: c,
                amp: rng.gen_range(amp_lo..amp_hi),
                sigma: rng.gen_range(sig_lo..sig_hi),
                w: (0..spec.d_pose).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                b: rng.gen_range(-0.5..0.5),
            });
        }

        let patch = spec.pose_texture_patch.then(|| TexPatch {
            center: embed_kind(&spec, [rng.gen_range(0.0..1.0), rng.gen_range(0.2..0.8)]),
            sigma: rng.gen_range(0.35..0.55),
            w: (0..spec.d_pose).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            b: rng.gen_range(-0.5..0.5),
            color: [0.85, 0.2, 0.25],
        });

        // Camera ring with alternating elevation; up is world z.
        let focal = spec.focal_factor * spec.height as f64;
        let mut cameras = Vec::with_capacity(spec.cameras);
        for i in 0..spec.cameras {
            let az = TAU * i as f64 / spec.cameras as f64 + 0.25;
            let el: f64 = rng.gen_range(-0.55..0.55);
            let eye = vec3(
                spec.camera_distance * az.cos() * el.cos(),
                spec.camera_distance * az.sin() * el.cos(),
                spec.camera_distance * el.sin(),
            );
            cameras.push(
                Camera::look_at(eye, Vec3::ZERO, vec3(0.0, 0.0, 1.0), focal, spec.width, spec.height)
                    .expect("ring camera is valid"),
            );
        }
        let mut idx: Vec<usize> = (0..spec.cameras).collect();
        // Fisher-Yates with the scene stream: "randomly choose training cameras".
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        let train_camera_indices = idx[..spec.train_cameras].to_vec();

        let draw_poses = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..spec.d_pose).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        };
        let poses_train = draw_poses(spec.train_poses, &mut rng);
        let poses_unseen = draw_poses(spec.unseen_poses, &mut rng);

        Ok(SyntheticScene {
            spec,
            template,
            bumps,
            patch,
            cameras,
            train_camera_indices,
            poses_train,
            poses_unseen,
        })
    }

    pub fn holdout_camera_indices(&self) -> Vec<usize> {
        (0..self.spec.cameras)
            .filter(|i| !self.train_camera_indices.contains(i))
            .collect()
    }

    /// Closed-form surface point for a texel (seam-continuous).
    pub fn embed(&self, texel: [f64; 2]) -> Vec3 {
        embed_kind(&self.spec, texel)
    }

    /// Analytic ground-truth offset l*(u, v, pose).
    pub fn gt_offset(&self, texel: [f64; 2], pose: &[f64]) -> f64 {
        let x = self.embed(texel);
        let mut l = 0.0;
        for bump in &self.bumps {
            let d2 = (x - bump.center).length_sq();
            let g = (-d2 / (2.0 * bump.sigma * bump.sigma)).exp();
            l += bump.amp * pose_gate(&bump.w, bump.b, pose) * g;
        }
        l
    }

    /// Analytic ground-truth texture c*(u, v, pose), channels in [0, 1].
    pub fn gt_texture(&self, texel: [f64; 2], pose: &[f64]) -> [f64; 3] {
        let [u, v] = texel;
        // Soft checker between two base colors.
        let k = 4.0;
        let s = ((TAU * k * u).sin() * (core::f64::consts::PI * k * v).sin() / 0.35).tanh();
        let t = 0.5 + 0.5 * s;
        let ca = [0.25, 0.45, 0.70];
        let cb = [0.80, 0.55, 0.30];
        let mut c = [0.0; 3];
        for i in 0..3 {
            c[i] = ca[i] + (cb[i] - ca[i]) * t;
        }
        // Gentle modulation breaks symmetry; periodic in u and collapsing at
        // the poles so it stays consistent where the atlas degenerates.
        c[0] += 0.10 * (TAU * u).cos() * (core::f64::consts::PI * v).sin();
        c[1] += 0.15 * (v - 0.5);
        // Pose-driven patch.
        if let Some(p) = &self.patch {
            let d2 = (self.embed(texel) - p.center).length_sq();
            let g = (-d2 / (2.0 * p.sigma * p.sigma)).exp();
            let m = g * pose_gate(&p.w, p.b, pose);
            for i in 0..3 {
                c[i] += m * (p.color[i] - c[i]);
            }
        }
        for ch in &mut c {
            *ch = ch.clamp(0.03, 0.97);
        }
        c
    }

    /// Ground-truth offsets at the template's canonical vertex texels.
    pub fn gt_vertex_offsets(&self, pose: &[f64]) -> Vec<f64> {
        self.template
            .vertex_texels()
            .iter()
            .map(|&t| self.gt_offset(t, pose))
            .collect()
    }

    /// Template deformed by the ground-truth field (Eq. 5 with l*).
    pub fn gt_deformed(&self, pose: &[f64]) -> DeformedMesh {
        let ls = self.gt_vertex_offsets(pose);
        let (mesh, clamped) = self.template.deform(&ls, 0.5).expect("offset count matches");
        debug_assert_eq!(clamped, 0, "GT offsets exceed the budget");
        mesh
    }

    /// Rasterize the ground-truth geometry and shade with the ground-truth
    /// texture: returns (row-major RGB over black, coverage mask).
    pub fn render_gt(&self, camera: &Camera, pose: &[f64]) -> (Vec<[f64; 3]>, Vec<bool>) {
        let deformed = self.gt_deformed(pose);
        let uv = rasterize(&deformed, camera);
        self.shade_gt(&uv, pose)
    }

    /// Shade an already-rasterized GT frame.
    pub fn shade_gt(&self, uv: &UvImage, pose: &[f64]) -> (Vec<[f64; 3]>, Vec<bool>) {
        let n = uv.width as usize * uv.height as usize;
        let (texels, _, _, covered) = uv.buffers();
        let mut img = vec![[0.0; 3]; n];
        for i in 0..n {
            if covered[i] {
                img[i] = self.gt_texture(texels[i], pose);
            }
        }
        (img, covered.to_vec())
    }
}

fn embed_kind(spec: &SceneSpec, texel: [f64; 2]) -> Vec3 {
    match spec.template {
        TemplateKind::Sphere => sphere_embedding(texel) * spec.radius,
        TemplateKind::Capsule => capsule_embedding(texel, spec.radius, spec.half_len),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat3;
    use crate::raster::rasterize_template;

    fn tiny_spec() -> SceneSpec {
        SceneSpec { level: 3, width: 64, height: 64, ..SceneSpec::default() }
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let a = SyntheticScene::generate(tiny_spec()).unwrap();
        let b = SyntheticScene::generate(tiny_spec()).unwrap();
        let c = SyntheticScene::generate(SceneSpec { seed: 8, ..tiny_spec() }).unwrap();
        assert_eq!(a.poses_train, b.poses_train);
        assert_eq!(a.train_camera_indices, b.train_camera_indices);
        let probe = [[0.3, 0.4], [0.8, 0.2], [0.05, 0.9]];
        let pose = &a.poses_train[0];
        for t in probe {
            assert_eq!(a.gt_offset(t, pose), b.gt_offset(t, pose));
            assert_eq!(a.gt_texture(t, pose), b.gt_texture(t, pose));
        }
        assert_ne!(a.poses_train, c.poses_train);
    }

    #[test]
    fn offsets_are_bounded_nontrivial_and_pose_dependent() {
        let scene = SyntheticScene::generate(tiny_spec()).unwrap();
        let mut max_l: f64 = 0.0;
        let mut varies = false;
        for pose in scene.poses_train.iter().chain(&scene.poses_unseen) {
            for gy in 0..64 {
                for gx in 0..64 {
                    let t = [(gx as f64 + 0.5) / 64.0, (gy as f64 + 0.5) / 64.0];
                    let l = scene.gt_offset(t, pose);
                    assert!(l >= 0.0);
                    max_l = max_l.max(l);
                }
            }
        }
        assert!(max_l < 0.4, "max offset {max_l}");
        assert!(max_l > 0.05, "offset field nearly flat: {max_l}");
        let t = [0.37, 0.52];
        let l0 = scene.gt_offset(t, &scene.poses_train[0]);
        for p in &scene.poses_train[1..] {
            if (scene.gt_offset(t, p) - l0).abs() > 1e-6 {
                varies = true;
            }
        }
        assert!(varies, "offsets do not respond to pose");
    }

    #[test]
    fn textures_stay_in_gamut_and_follow_the_patch_flag() {
        let scene = SyntheticScene::generate(tiny_spec()).unwrap();
        let fixed =
            SyntheticScene::generate(SceneSpec { pose_texture_patch: false, ..tiny_spec() })
                .unwrap();
        let mut pose_effect: f64 = 0.0;
        for gy in 0..32 {
            for gx in 0..32 {
                let t = [(gx as f64 + 0.5) / 32.0, (gy as f64 + 0.5) / 32.0];
                let c0 = scene.gt_texture(t, &scene.poses_train[0]);
                let c1 = scene.gt_texture(t, &scene.poses_train[1]);
                for ch in 0..3 {
                    assert!((0.0..=1.0).contains(&c0[ch]));
                    pose_effect = pose_effect.max((c1[ch] - c0[ch]).abs());
                }
                assert_eq!(
                    fixed.gt_texture(t, &fixed.poses_train[0]),
                    fixed.gt_texture(t, &fixed.poses_train[1]),
                );
            }
        }
        assert!(pose_effect > 1e-3, "patch has no pose response");
    }

    #[test]
    fn fields_are_seam_continuous() {
        let scene = SyntheticScene::generate(tiny_spec()).unwrap();
        let pose = &scene.poses_train[2];
        for k in 0..16 {
            let v = (k as f64 + 0.5) / 16.0;
            let dl = (scene.gt_offset([0.0, v], pose) - scene.gt_offset([1.0, v], pose)).abs();
            assert!(dl < 1e-9, "offset seam jump {dl}");
            let ca = scene.gt_texture([0.0, v], pose);
            let cb = scene.gt_texture([1.0, v], pose);
            for ch in 0..3 {
                assert!((ca[ch] - cb[ch]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_bump_scene_renders_the_undeformed_template() {
        let scene =
            SyntheticScene::generate(SceneSpec { bumps: 0, ..tiny_spec() }).unwrap();
        let pose = scene.poses_train[0].clone();
        let cam = &scene.cameras[0];
        let (img, mask) = scene.render_gt(cam, &pose);
        let uv = rasterize_template(&scene.template, cam);
        let (want, want_mask) = scene.shade_gt(&uv, &pose);
        assert_eq!(mask, want_mask);
        assert_eq!(img, want);
        assert!(mask.iter().filter(|&&c| c).count() > 500);
    }

    /// Silhouette oracle: a sphere inflated by a constant 0.15 offset must
    /// project to a disc whose pixel radius matches pinhole trigonometry.
    #[test]
    fn constant_inflation_silhouette_matches_projection() {
        let scene = SyntheticScene::generate(SceneSpec::default()).unwrap();
        let n_verts = scene.template.vertices().len();
        let (deformed, _) = scene.template.deform(&vec![0.15; n_verts], 0.5).unwrap();
        let (w, h, f) = (128u32, 128u32, 140.8);
        let dist = 3.5;
        let cam = Camera::new(
            f,
            f,
            w as f64 / 2.0,
            h as f64 / 2.0,
            w,
            h,
            Mat3::from_rows(vec3(0.0, 1.0, 0.0), vec3(0.0, 0.0, -1.0), vec3(-1.0, 0.0, 0.0)),
            vec3(0.0, 0.0, dist), // camera at (dist, 0, 0) looking down -x
        )
        .unwrap();
        let uv = rasterize(&deformed, &cam);
        let mut max_r: f64 = 0.0;
        for py in 0..h {
            for px in 0..w {
                if uv.covered(px, py) {
                    let dx = px as f64 + 0.5 - 64.0;
                    let dy = py as f64 + 0.5 - 64.0;
                    max_r = max_r.max((dx * dx + dy * dy).sqrt());
                }
            }
        }
        let want = f * (1.15f64 / dist).asin().tan();
        assert!((max_r - want).abs() < 1.0, "silhouette {max_r} vs analytic {want}");
    }

    #[test]
    fn capsule_scene_generates_and_renders() {
        let spec = SceneSpec {
            template: TemplateKind::Capsule,
            level: 3,
            width: 64,
            height: 64,
            ..SceneSpec::default()
        };
        let scene = SyntheticScene::generate(spec).unwrap();
        let (_, mask) = scene.render_gt(&scene.cameras[1], &scene.poses_train[0]);
        assert!(mask.iter().filter(|&&c| c).count() > 300);
    }
}
