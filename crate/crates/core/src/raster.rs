//! Inference-time rasterization: depth-buffered triangle rasterization of
//! the deformed template into a texel buffer, single-query texture shading,
//! and texture-map editing.
//!
//! The rasterizer is deliberately hard (no antialiasing, top-left fill rule,
//! discard at the near plane): training gradients flow through the
//! volumetric path, so inference only needs first-hit texels.

use alloc::vec;
use alloc::vec::Vec;

use crate::fields::{FieldError, FieldEval, FieldModel};
use crate::geometry::{DeformedMesh, GeometryError, TemplateMesh};
use crate::math::Vec3;
use crate::volren::Camera;
#[cfg_attr(feature = "std", allow(unused_imports))]
use crate::math::FloatMath;

/// Camera-space depth below which triangles are discarded outright.
pub const NEAR_CLIP: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("NES_UVL cannot be rendered with Rasterization-based Neural Rendering")]
    UvlUnsupported,
    #[error("edit mask has zero resolution")]
    EmptyMask,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Per-pixel first-hit buffer: texel coordinate, face id, and camera-space
/// depth for covered pixels.
#[derive(Debug, Clone)]
pub struct UvImage {
    pub width: u32,
    pub height: u32,
    texels: Vec<[f64; 2]>,
    faces: Vec<u32>,
    depths: Vec<f64>,
    covered: Vec<bool>,
}

impl UvImage {
    fn blank(width: u32, height: u32) -> UvImage {
        let n = width as usize * height as usize;
        UvImage {
            width,
            height,
            texels: vec![[0.0, 0.0]; n],
            faces: vec![0; n],
            depths: vec![f64::INFINITY; n],
            covered: vec![false; n],
        }
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn covered(&self, x: u32, y: u32) -> bool {
        self.covered[self.idx(x, y)]
    }

    pub fn texel(&self, x: u32, y: u32) -> Option<[f64; 2]> {
        self.covered(x, y).then(|| self.texels[self.idx(x, y)])
    }

    pub fn face(&self, x: u32, y: u32) -> Option<u32> {
        self.covered(x, y).then(|| self.faces[self.idx(x, y)])
    }

    pub fn depth(&self, x: u32, y: u32) -> Option<f64> {
        self.covered(x, y).then(|| self.depths[self.idx(x, y)])
    }

    pub fn coverage_count(&self) -> usize {
        self.covered.iter().filter(|&&c| c).count()
    }

    /// Raw buffers in row-major order (debug dumps, band stitching).
    pub fn buffers(&self) -> (&[[f64; 2]], &[u32], &[f64], &[bool]) {
        (&self.texels, &self.faces, &self.depths, &self.covered)
    }

    /// Append another band of rows rendered with the same width.
    pub fn append_rows(&mut self, band: UvImage) {
        assert_eq!(self.width, band.width, "band width mismatch");
        self.height += band.height;
        self.texels.extend(band.texels);
        self.faces.extend(band.faces);
        self.depths.extend(band.depths);
        self.covered.extend(band.covered);
    }

    pub fn empty(width: u32) -> UvImage {
        UvImage::blank(width, 0)
    }
}

/// Rasterize the deformed mesh over the full frame.
pub fn rasterize(mesh: &DeformedMesh, camera: &Camera) -> UvImage {
    rasterize_rows(mesh, camera, 0, camera.height)
}

/// Rasterize rows [row0, row1) only; bands stitch with
/// [`UvImage::append_rows`]. The returned image has height row1 - row0.
pub fn rasterize_rows(mesh: &DeformedMesh, camera: &Camera, row0: u32, row1: u32) -> UvImage {
    raster_impl(mesh.vertices(), mesh.faces(), mesh.face_texels(), camera, row0, row1)
}

/// Rasterize the undeformed template (zero-offset reference path).
pub fn rasterize_template(mesh: &TemplateMesh, camera: &Camera) -> UvImage {
    raster_impl(mesh.vertices(), mesh.faces(), mesh.face_texels(), camera, 0, camera.height)
}

/// b - a cross c - a in screen space (y down); positive for clockwise
/// triangles, zero on the line through a and b.
#[inline]
fn orient2d(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// Top-left fill rule for a positively oriented triangle: a pixel center
/// exactly on an edge belongs to the triangle only when that edge is a top
/// or left edge, so adjacent triangles never both claim it.
#[inline]
fn edge_accepts_boundary(a: (f64, f64), b: (f64, f64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

fn raster_impl(
    vertices: &[Vec3],
    faces: &[[u32; 3]],
    face_texels: &[[[f64; 2]; 3]],
    camera: &Camera,
    row0: u32,
    row1: u32,
) -> UvImage {
    assert!(row0 <= row1 && row1 <= camera.height);
    let mut out = UvImage::blank(camera.width, row1 - row0);
    // Project every vertex once: (screen x, screen y, camera depth).
    let proj: Vec<Option<(f64, f64, f64)>> = vertices
        .iter()
        .map(|&v| camera.project(v).filter(|p| p.2 > NEAR_CLIP))
        .collect();

    let band_top = row0 as f64;
    let band_bot = row1 as f64;
    for (fi, f) in faces.iter().enumerate() {
        // Triangles crossing the near plane are discarded, not clipped.
        let (Some(q0), Some(q1), Some(q2)) =
            (proj[f[0] as usize], proj[f[1] as usize], proj[f[2] as usize])
        else {
            continue;
        };
        let mut p = [(q0.0, q0.1), (q1.0, q1.1), (q2.0, q2.1)];
        let mut z = [q0.2, q1.2, q2.2];
        let mut tex = face_texels[fi];
        let area = orient2d(p[0], p[1], p[2]);
        if area >= 0.0 {
            // Outward-wound front faces project counter-clockwise (negative
            // area in y-down coordinates); cull the rest and degenerates.
            continue;
        }
        // Flip to the positive orientation the fill rule is written for.
        p.swap(1, 2);
        z.swap(1, 2);
        tex.swap(1, 2);
        let area = -area;

        let min_x = p[0].0.min(p[1].0).min(p[2].0).floor().max(0.0) as u32;
        let max_x = (p[0].0.max(p[1].0).max(p[2].0).ceil() as i64)
            .min(camera.width as i64 - 1)
            .max(0) as u32;
        let min_y = p[0].1.min(p[1].1).min(p[2].1).floor().max(band_top) as u32;
        let max_y = (p[0].1.max(p[1].1).max(p[2].1).ceil())
            .min(band_bot - 1.0)
            .max(band_top) as u32;
        if min_x > max_x || min_y as f64 >= band_bot {
            continue;
        }
        let accept = [
            edge_accepts_boundary(p[1], p[2]),
            edge_accepts_boundary(p[2], p[0]),
            edge_accepts_boundary(p[0], p[1]),
        ];
        let inv_z = [1.0 / z[0], 1.0 / z[1], 1.0 / z[2]];
        for py in min_y..=max_y {
            for px in min_x..=max_x {
                let c = (px as f64 + 0.5, py as f64 + 0.5);
                let w = [
                    orient2d(p[1], p[2], c),
                    orient2d(p[2], p[0], c),
                    orient2d(p[0], p[1], c),
                ];
                let inside = (0..3).all(|k| w[k] > 0.0 || (w[k] == 0.0 && accept[k]));
                if !inside {
                    continue;
                }
                // Perspective-correct interpolation: screen barycentrics
                // weight 1/z; depth is the harmonic blend.
                let l = [w[0] / area, w[1] / area, w[2] / area];
                let wz = [l[0] * inv_z[0], l[1] * inv_z[1], l[2] * inv_z[2]];
                let inv_depth = wz[0] + wz[1] + wz[2];
                let depth = 1.0 / inv_depth;
                let i = out.idx(px, py - row0);
                if depth >= out.depths[i] {
                    continue;
                }
                let mut u = 0.0;
                let mut v = 0.0;
                for k in 0..3 {
                    let b = wz[k] * depth;
                    u += b * tex[k][0];
                    v += b * tex[k][1];
                }
                out.depths[i] = depth;
                out.faces[i] = fi as u32;
                out.texels[i] = [u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)];
                out.covered[i] = true;
            }
        }
    }
    out
}

/// Shading statistics; `texture_queries` counts texture-net evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RrStats {
    pub covered: usize,
    pub texture_queries: usize,
    pub clamped_offsets: usize,
}

/// Per-vertex offsets at canonical texels (Eq. 5 input).
pub fn vertex_offsets(
    mesh: &TemplateMesh,
    model: &FieldModel,
    pose: &[f64],
) -> Result<Vec<f64>, RasterError> {
    let texels = mesh.vertex_texels();
    let hs = vec![0.0; texels.len()];
    let mut ls = Vec::new();
    FieldEval::new().offsets(model, texels, &hs, pose, &mut ls)?;
    Ok(ls)
}

/// Deform the template by per-vertex offsets from the current model.
pub fn deform_for_pose(
    mesh: &TemplateMesh,
    model: &FieldModel,
    pose: &[f64],
) -> Result<(DeformedMesh, usize), RasterError> {
    let ls = vertex_offsets(mesh, model, pose)?;
    Ok(mesh.deform(&ls, model.config().max_offset)?)
}

/// Shade a rasterized frame: exactly one texture query per covered pixel,
/// black elsewhere. Returns row-major RGB.
pub fn shade(
    uv: &UvImage,
    model: &FieldModel,
    pose: &[f64],
) -> Result<(Vec<[f64; 3]>, RrStats), RasterError> {
    let n = uv.width as usize * uv.height as usize;
    let (texels_buf, _, _, covered_buf) = uv.buffers();
    let mut sel = Vec::new();
    let mut sel_tex = Vec::new();
    for i in 0..n {
        if covered_buf[i] {
            sel.push(i);
            sel_tex.push(texels_buf[i]);
        }
    }
    let hs = vec![0.0; sel_tex.len()];
    let mut rgbs = Vec::new();
    FieldEval::new().textures(model, &sel_tex, &hs, pose, &mut rgbs)?;
    let mut img = vec![[0.0; 3]; n];
    for (slot, rgb) in sel.iter().zip(&rgbs) {
        img[*slot] = *rgb;
    }
    Ok((
        img,
        RrStats { covered: sel.len(), texture_queries: rgbs.len(), clamped_offsets: 0 },
    ))
}

/// Rasterization-based neural rendering: deform vertices by the offset
/// field, rasterize, then query the texture field once per covered pixel.
pub fn render_rr(
    mesh: &TemplateMesh,
    model: &FieldModel,
    pose: &[f64],
    camera: &Camera,
) -> Result<(Vec<[f64; 3]>, RrStats), RasterError> {
    if model.config().uvl {
        return Err(RasterError::UvlUnsupported);
    }
    let (deformed, clamped) = deform_for_pose(mesh, model, pose)?;
    let uv = rasterize(&deformed, camera);
    let (img, mut stats) = shade(&uv, model, pose)?;
    stats.clamped_offsets = clamped;
    Ok((img, stats))
}

/// An RGBA pattern over [0,1]^2 texel space, sampled bilinearly.
#[derive(Debug, Clone)]
pub struct TexelMask {
    pub width: u32,
    pub height: u32,
    /// Row-major RGBA, alpha in [0,1].
    pub rgba: Vec<[f64; 4]>,
}

impl TexelMask {
    pub fn new(width: u32, height: u32, rgba: Vec<[f64; 4]>) -> Result<TexelMask, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyMask);
        }
        assert_eq!(rgba.len(), width as usize * height as usize);
        Ok(TexelMask { width, height, rgba })
    }

    pub fn constant(rgba: [f64; 4]) -> TexelMask {
        TexelMask { width: 1, height: 1, rgba: vec![rgba] }
    }

    /// Bilinear sample with texel-center alignment, clamped at the borders.
    pub fn sample(&self, u: f64, v: f64) -> [f64; 4] {
        let fx = (u * self.width as f64 - 0.5).clamp(0.0, self.width as f64 - 1.0);
        let fy = (v * self.height as f64 - 0.5).clamp(0.0, self.height as f64 - 1.0);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width as usize - 1);
        let y1 = (y0 + 1).min(self.height as usize - 1);
        let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
        let at = |x: usize, y: usize| self.rgba[y * self.width as usize + x];
        let mut out = [0.0; 4];
        let (p00, p10, p01, p11) = (at(x0, y0), at(x1, y0), at(x0, y1), at(x1, y1));
        for c in 0..4 {
            let top = p00[c] * (1.0 - ax) + p10[c] * ax;
            let bot = p01[c] * (1.0 - ax) + p11[c] * ax;
            out[c] = top * (1.0 - ay) + bot * ay;
        }
        out
    }
}

/// Rasterization rendering with a texture edit: per covered pixel,
/// out = alpha(u) * pattern(u) + (1 - alpha(u)) * texture(u, pose).
pub fn edit_texture(
    mesh: &TemplateMesh,
    model: &FieldModel,
    pose: &[f64],
    camera: &Camera,
    mask: &TexelMask,
) -> Result<(Vec<[f64; 3]>, RrStats), RasterError> {
    if model.config().uvl {
        return Err(RasterError::UvlUnsupported);
    }
    let (deformed, clamped) = deform_for_pose(mesh, model, pose)?;
    let uv = rasterize(&deformed, camera);
    let (mut img, mut stats) = shade(&uv, model, pose)?;
    stats.clamped_offsets = clamped;
    for py in 0..uv.height {
        for px in 0..uv.width {
            let Some([u, v]) = uv.texel(px, py) else { continue };
            let p = mask.sample(u, v);
            let a = p[3];
            let i = (py * uv.width + px) as usize;
            for c in 0..3 {
                img[i][c] = a * p[c] + (1.0 - a) * img[i][c];
            }
        }
    }
    Ok((img, stats))
}
