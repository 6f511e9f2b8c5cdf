//! Pose-conditioned surface offset and texture estimators.
//!
//! Both estimators are small MLPs over positionally encoded texel
//! coordinates with the pose vector appended raw. Hidden layers use the
//! squareplus ramp 0.5(x + sqrt(x^2+1)), an algebraic softplus-family
//! activation chosen so hidden layers cost no transcendentals; the offset
//! head is tanh scaled by `max_offset`, the texture head is a logistic
//! squashing, and final layers are zero-initialized so a fresh model is the
//! undeformed gray template. The density sharpness beta is stored as the log
//! of an unconstrained parameter appended to the registry.
//!
//! Every evaluation exists in two mirrored forms: a plain-loop batch path for
//! rendering (read-only on the weights, safe to call concurrently) and a
//! taped path for training. The two use the same kernels and operation
//! order, so their outputs agree bitwise. Texel-space offset gradients come
//! from forward-mode tangent channels in both paths, which keeps the refined
//! distance differentiable without second-order tape support.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{matmul_acc, sigmoid, Tape, Var};
use crate::math::PI;
#[cfg_attr(feature = "std", allow(unused_imports))]
use crate::math::FloatMath;

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error("texel ({u}, {v}) outside the unit square")]
    TexelOutOfRange { u: f64, v: f64 },
    #[error("pose has {got} entries, model expects {expected}")]
    PoseLength { expected: usize, got: usize },
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
}

/// Architecture and ablation switches. `width`/`depth` count hidden units
/// and linear layers per net; `depth` 12 is the full model, 6 and 3 the
/// reduced ablation variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldConfig {
    /// Positional encoding frequency pairs per input coordinate.
    pub octaves: usize,
    /// Hidden layer width.
    pub width: usize,
    /// Linear layers per net, including the head.
    pub depth: usize,
    /// Pose vector dimension.
    pub d_pose: usize,
    /// Scale of the tanh offset head; |l| never exceeds this.
    pub max_offset: f64,
    /// Offset net sees the pose (off reproduces the fixed-geometry ablation).
    pub pose_offset: bool,
    /// Texture net sees the pose (off reproduces the fixed-texture ablation).
    pub pose_texture: bool,
    /// Apply the tilt-corrected signed distance during conversion.
    pub refined: bool,
    /// Condition both nets on (u, v, h) instead of (u, v); volumetric only.
    pub uvl: bool,
}

impl Default for FieldConfig {
    fn default() -> FieldConfig {
        FieldConfig {
            octaves: 6,
            width: 16,
            depth: 12,
            d_pose: 8,
            max_offset: 0.5,
            pose_offset: true,
            pose_texture: true,
            refined: true,
            uvl: false,
        }
    }
}

impl FieldConfig {
    pub fn coord_count(&self) -> usize {
        if self.uvl {
            3
        } else {
            2
        }
    }

    pub fn pe_dim(&self) -> usize {
        2 * self.octaves * self.coord_count()
    }

    pub fn input_dim(&self) -> usize {
        self.pe_dim() + self.d_pose
    }

    /// (in, out) of each linear layer for a net with `out` outputs.
    fn layer_dims(&self, out: usize) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth);
        let mut d_in = self.input_dim();
        for i in 0..self.depth {
            let d_out = if i + 1 == self.depth { out } else { self.width };
            dims.push((d_in, d_out));
            d_in = d_out;
        }
        dims
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone)]
struct NetLayout {
    layers: Vec<Layer>,
}

fn net_layout(dims: &[(usize, usize)], start: usize) -> (NetLayout, usize) {
    let mut at = start;
    let mut layers = Vec::with_capacity(dims.len());
    for &(rows, cols) in dims {
        let w = at;
        at += rows * cols;
        let b = at;
        at += cols;
        layers.push(Layer { w, b, rows, cols });
    }
    (NetLayout { layers }, at)
}

/// The trainable state: both nets' weights plus log(beta), in one flat
/// registry (offset net, texture net, then beta).
#[derive(Debug, Clone)]
pub struct FieldModel {
    config: FieldConfig,
    params: Vec<f64>,
    offset: NetLayout,
    texture: NetLayout,
    beta_idx: usize,
}

impl FieldModel {
    /// Total registry length for a config, including the beta slot.
    pub fn param_count_for(config: &FieldConfig) -> usize {
        let n = |dims: &[(usize, usize)]| -> usize {
            dims.iter().map(|&(r, c)| r * c + c).sum()
        };
        n(&config.layer_dims(1)) + n(&config.layer_dims(3)) + 1
    }

    /// Fresh model: Xavier-uniform hidden layers, zero-initialized heads
    /// (so offsets start at 0 and texture at mid gray), beta = 0.1.
    pub fn new(config: FieldConfig, seed: u64) -> FieldModel {
        assert!(config.octaves >= 1 && config.width >= 1 && config.depth >= 1);
        assert!(config.max_offset > 0.0);
        let (offset, mid) = net_layout(&config.layer_dims(1), 0);
        let (texture, beta_idx) = net_layout(&config.layer_dims(3), mid);
        let mut params = vec![0.0; beta_idx + 1];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for net in [&offset, &texture] {
            for (i, layer) in net.layers.iter().enumerate() {
                if i + 1 == net.layers.len() {
                    continue; // zero-init head
                }
                let lim = (6.0 / (layer.rows + layer.cols) as f64).sqrt();
                for w in &mut params[layer.w..layer.w + layer.rows * layer.cols] {
                    *w = rng.gen_range(-lim..lim);
                }
            }
        }
        params[beta_idx] = 0.1f64.ln();
        FieldModel { config, params, offset, texture, beta_idx }
    }

    /// Rebuild from a parameter registry (checkpoint loading).
    pub fn with_params(config: FieldConfig, params: Vec<f64>) -> Result<FieldModel, FieldError> {
        let expected = FieldModel::param_count_for(&config);
        if params.len() != expected {
            return Err(FieldError::ParamCount { expected, got: params.len() });
        }
        let (offset, mid) = net_layout(&config.layer_dims(1), 0);
        let (texture, beta_idx) = net_layout(&config.layer_dims(3), mid);
        Ok(FieldModel { config, params, offset, texture, beta_idx })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn beta(&self) -> f64 {
        self.params[self.beta_idx].exp()
    }

    pub fn set_beta(&mut self, beta: f64) {
        assert!(beta > 0.0);
        self.params[self.beta_idx] = beta.ln();
    }

    /// Human-readable name of a registry slot, for training diagnostics.
    pub fn param_name(&self, index: usize) -> String {
        for (net, name) in [(&self.offset, "offset"), (&self.texture, "texture")] {
            for (li, layer) in net.layers.iter().enumerate() {
                let wlen = layer.rows * layer.cols;
                if index >= layer.w && index < layer.w + wlen {
                    let k = index - layer.w;
                    return alloc::format!("{name}.l{li}.w[{},{}]", k / layer.cols, k % layer.cols);
                }
                if index >= layer.b && index < layer.b + layer.cols {
                    return alloc::format!("{name}.l{li}.b[{}]", index - layer.b);
                }
            }
        }
        String::from("log_beta")
    }

    fn check_pose(&self, pose: &[f64]) -> Result<(), FieldError> {
        if pose.len() != self.config.d_pose {
            return Err(FieldError::PoseLength { expected: self.config.d_pose, got: pose.len() });
        }
        Ok(())
    }

    /// Surface offset l at one texel. For the (u,v,h) variant this queries
    /// the template surface h = 0; renderers use the batch paths with
    /// explicit heights.
    pub fn eval_offset(&self, texel: (f64, f64), pose: &[f64]) -> Result<f64, FieldError> {
        let mut ev = FieldEval::default();
        let mut out = Vec::with_capacity(1);
        ev.offsets(self, &[[texel.0, texel.1]], &[0.0], pose, &mut out)?;
        Ok(out[0])
    }

    /// Texture color at one texel, each channel in [0, 1].
    pub fn eval_texture(&self, texel: (f64, f64), pose: &[f64]) -> Result<[f64; 3], FieldError> {
        let mut ev = FieldEval::default();
        let mut out = Vec::with_capacity(1);
        ev.textures(self, &[[texel.0, texel.1]], &[0.0], pose, &mut out)?;
        Ok(out[0])
    }

    /// (dl/du, dl/dv) in texel units at one texel.
    pub fn offset_gradient(&self, texel: (f64, f64), pose: &[f64]) -> Result<(f64, f64), FieldError> {
        let mut ev = FieldEval::default();
        let (mut l, mut gu, mut gv) = (Vec::new(), Vec::new(), Vec::new());
        ev.offsets_with_grad(self, &[[texel.0, texel.1]], &[0.0], pose, &mut l, &mut gu, &mut gv)?;
        Ok((gu[0], gv[0]))
    }
}

/// Texel coordinates may exceed [0,1] by this much (barycentric rounding)
/// and are clamped; anything farther out is an argument error.
const TEXEL_SLACK: f64 = 1e-9;

fn checked_texel(u: f64, v: f64) -> Result<(f64, f64), FieldError> {
    if !(u >= -TEXEL_SLACK && u <= 1.0 + TEXEL_SLACK && v >= -TEXEL_SLACK && v <= 1.0 + TEXEL_SLACK) {
        return Err(FieldError::TexelOutOfRange { u, v });
    }
    Ok((u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)))
}

/// Fill one input row (and optionally its d/du, d/dv tangent rows) with the
/// positional encoding followed by the raw pose (zeroed when masked off).
#[allow(clippy::too_many_arguments)]
fn fill_row(
    cfg: &FieldConfig,
    u: f64,
    v: f64,
    h: f64,
    pose: &[f64],
    pose_on: bool,
    row: &mut [f64],
    mut tangents: Option<(&mut [f64], &mut [f64])>,
) {
    let coords = [u, v, h];
    let mut j = 0;
    for (ci, &c) in coords[..cfg.coord_count()].iter().enumerate() {
        let mut f = PI;
        for _ in 0..cfg.octaves {
            let (s, co) = ((f * c).sin(), (f * c).cos());
            row[j] = s;
            row[j + 1] = co;
            if let Some((ru, rv)) = tangents.as_mut() {
                let (du, dv) = match ci {
                    0 => (f * co, 0.0),
                    1 => (0.0, f * co),
                    _ => (0.0, 0.0),
                };
                ru[j] = du;
                rv[j] = dv;
                let (du, dv) = match ci {
                    0 => (-f * s, 0.0),
                    1 => (0.0, -f * s),
                    _ => (0.0, 0.0),
                };
                ru[j + 1] = du;
                rv[j + 1] = dv;
            }
            j += 2;
            f *= 2.0;
        }
    }
    for (k, &p) in pose.iter().enumerate() {
        row[j + k] = if pose_on { p } else { 0.0 };
        if let Some((ru, rv)) = tangents.as_mut() {
            ru[j + k] = 0.0;
            rv[j + k] = 0.0;
        }
    }
}

enum Head {
    /// tanh scaled to [-max_offset, max_offset].
    Offset(f64),
    /// Per-channel logistic.
    Texture,
}

/// Reusable scratch for the untraced batch paths. Construction is cheap but
/// reuse avoids reallocation in per-pixel rendering loops.
#[derive(Default)]
pub struct FieldEval {
    x: Vec<f64>,
    xu: Vec<f64>,
    xv: Vec<f64>,
    y: Vec<f64>,
    yu: Vec<f64>,
    yv: Vec<f64>,
}

impl FieldEval {
    pub fn new() -> FieldEval {
        FieldEval::default()
    }

    /// Offsets for a batch of texels. `hs` is consulted only by the
    /// (u,v,h) variant, which requires one height per texel.
    pub fn offsets(
        &mut self,
        model: &FieldModel,
        texels: &[[f64; 2]],
        hs: &[f64],
        pose: &[f64],
        out: &mut Vec<f64>,
    ) -> Result<(), FieldError> {
        self.fill_inputs(model, texels, hs, pose, model.config.pose_offset, false)?;
        self.run(model, &model.offset, texels.len(), false, Head::Offset(model.config.max_offset));
        out.clear();
        out.extend_from_slice(&self.x[..texels.len()]);
        Ok(())
    }

    /// Offsets plus texel-space gradients via forward-mode tangents.
    #[allow(clippy::too_many_arguments)]
    pub fn offsets_with_grad(
        &mut self,
        model: &FieldModel,
        texels: &[[f64; 2]],
        hs: &[f64],
        pose: &[f64],
        out_l: &mut Vec<f64>,
        out_gu: &mut Vec<f64>,
        out_gv: &mut Vec<f64>,
    ) -> Result<(), FieldError> {
        self.fill_inputs(model, texels, hs, pose, model.config.pose_offset, true)?;
        self.run(model, &model.offset, texels.len(), true, Head::Offset(model.config.max_offset));
        let s = texels.len();
        out_l.clear();
        out_l.extend_from_slice(&self.x[..s]);
        out_gu.clear();
        out_gu.extend_from_slice(&self.xu[..s]);
        out_gv.clear();
        out_gv.extend_from_slice(&self.xv[..s]);
        Ok(())
    }

    /// Texture colors for a batch of texels, each channel in [0, 1].
    pub fn textures(
        &mut self,
        model: &FieldModel,
        texels: &[[f64; 2]],
        hs: &[f64],
        pose: &[f64],
        out: &mut Vec<[f64; 3]>,
    ) -> Result<(), FieldError> {
        self.fill_inputs(model, texels, hs, pose, model.config.pose_texture, false)?;
        self.run(model, &model.texture, texels.len(), false, Head::Texture);
        out.clear();
        for row in self.x[..texels.len() * 3].chunks_exact(3) {
            out.push([row[0], row[1], row[2]]);
        }
        Ok(())
    }

    fn fill_inputs(
        &mut self,
        model: &FieldModel,
        texels: &[[f64; 2]],
        hs: &[f64],
        pose: &[f64],
        pose_on: bool,
        tangents: bool,
    ) -> Result<(), FieldError> {
        model.check_pose(pose)?;
        let cfg = &model.config;
        if cfg.uvl {
            assert_eq!(hs.len(), texels.len(), "uvl needs one height per texel");
        }
        let d = cfg.input_dim();
        let s = texels.len();
        self.x.clear();
        self.x.resize(s * d, 0.0);
        if tangents {
            self.xu.clear();
            self.xu.resize(s * d, 0.0);
            self.xv.clear();
            self.xv.resize(s * d, 0.0);
        }
        for (i, t) in texels.iter().enumerate() {
            let (u, v) = checked_texel(t[0], t[1])?;
            let h = if cfg.uvl { hs[i] } else { 0.0 };
            let row = &mut self.x[i * d..(i + 1) * d];
            if tangents {
                let (ru, rv) = (&mut self.xu[i * d..(i + 1) * d], &mut self.xv[i * d..(i + 1) * d]);
                fill_row(cfg, u, v, h, pose, pose_on, row, Some((ru, rv)));
            } else {
                fill_row(cfg, u, v, h, pose, pose_on, row, None);
            }
        }
        Ok(())
    }

    /// Run the net over `self.x` (and tangents), leaving outputs in the same
    /// buffers. Kernels and operation order mirror the taped path exactly.
    fn run(&mut self, model: &FieldModel, net: &NetLayout, s: usize, tangents: bool, head: Head) {
        let p = &model.params;
        let last = net.layers.len() - 1;
        for (li, layer) in net.layers.iter().enumerate() {
            let (rows, cols) = (layer.rows, layer.cols);
            let w = &p[layer.w..layer.w + rows * cols];
            let b = &p[layer.b..layer.b + cols];
            linear(&self.x, s, w, rows, cols, b, &mut self.y);
            if tangents {
                linear(&self.xu, s, w, rows, cols, &[], &mut self.yu);
                linear(&self.xv, s, w, rows, cols, &[], &mut self.yv);
            }
            if li != last {
                for i in 0..s * cols {
                    let z = self.y[i];
                    let r = (z * z + 1.0).sqrt();
                    self.y[i] = (z + r) * 0.5;
                    if tangents {
                        let d = (z * (1.0 / r) + 1.0) * 0.5;
                        self.yu[i] *= d;
                        self.yv[i] *= d;
                    }
                }
            }
            core::mem::swap(&mut self.x, &mut self.y);
            if tangents {
                core::mem::swap(&mut self.xu, &mut self.yu);
                core::mem::swap(&mut self.xv, &mut self.yv);
            }
        }
        match head {
            Head::Offset(scale) => {
                for i in 0..s {
                    let t = self.x[i].tanh();
                    self.x[i] = t * scale;
                    if tangents {
                        let d = (t * t) * -1.0 + 1.0;
                        self.xu[i] = self.xu[i] * d * scale;
                        self.xv[i] = self.xv[i] * d * scale;
                    }
                }
            }
            Head::Texture => {
                for v in &mut self.x[..s * 3] {
                    *v = sigmoid(*v);
                }
            }
        }
    }
}

/// y = x[s,rows] * w[rows,cols] (+ bias rows when given).
fn linear(x: &[f64], s: usize, w: &[f64], rows: usize, cols: usize, b: &[f64], y: &mut Vec<f64>) {
    y.clear();
    y.resize(s * cols, 0.0);
    matmul_acc(&x[..s * rows], s, rows, w, cols, y);
    if !b.is_empty() {
        for row in y.chunks_exact_mut(cols) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
    }
}

/// Tape handles for every registry slot, created by [`FieldModel::bind`].
pub struct Bound {
    offset: Vec<(Var, Var)>,
    texture: Vec<(Var, Var)>,
    pub ln_beta: Var,
    regs: Vec<(Var, usize, usize)>,
}

/// Traced offsets with optional texel-space gradient channels.
pub struct TracedOffset {
    /// [S,1] offsets.
    pub l: Var,
    /// ([S,1] dl/du, [S,1] dl/dv) in texel units.
    pub grad: Option<(Var, Var)>,
}

impl FieldModel {
    /// Register every parameter as a tape leaf. Gradients flow back to the
    /// registry through [`FieldModel::accumulate_grads`].
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let mut regs = Vec::new();
        let mut bind_net = |tape: &mut Tape, net: &NetLayout| -> Vec<(Var, Var)> {
            net.layers
                .iter()
                .map(|layer| {
                    let wlen = layer.rows * layer.cols;
                    let w = tape.param(layer.rows, layer.cols, &self.params[layer.w..layer.w + wlen]);
                    let b = tape.param(1, layer.cols, &self.params[layer.b..layer.b + layer.cols]);
                    regs.push((w, layer.w, wlen));
                    regs.push((b, layer.b, layer.cols));
                    (w, b)
                })
                .collect()
        };
        let offset = bind_net(tape, &self.offset);
        let texture = bind_net(tape, &self.texture);
        let ln_beta = tape.param(1, 1, &self.params[self.beta_idx..=self.beta_idx]);
        regs.push((ln_beta, self.beta_idx, 1));
        Bound { offset, texture, ln_beta, regs }
    }

    /// beta as a traced positive scalar.
    pub fn traced_beta(&self, tape: &mut Tape, bound: &Bound) -> Var {
        tape.exp(bound.ln_beta)
    }

    /// Traced batch offsets (mirrors [`FieldEval::offsets_with_grad`]).
    pub fn traced_offsets(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        texels: &[[f64; 2]],
        hs: &[f64],
        pose: &[f64],
        want_grad: bool,
    ) -> Result<TracedOffset, FieldError> {
        let (x, tang) = self.traced_inputs(tape, texels, hs, pose, self.config.pose_offset, want_grad)?;
        let (y, grad) = self.traced_net(tape, &bound.offset, x, tang);
        let t = tape.tanh(y);
        let l = tape.scale(t, self.config.max_offset);
        let grad = grad.map(|(yu, yv)| {
            let tsq = tape.mul(t, t);
            let neg = tape.scale(tsq, -1.0);
            let om = tape.add_const(neg, 1.0);
            let du = tape.mul(yu, om);
            let dv = tape.mul(yv, om);
            (tape.scale(du, self.config.max_offset), tape.scale(dv, self.config.max_offset))
        });
        Ok(TracedOffset { l, grad })
    }

    /// Traced batch texture, [S,3] with channels in [0,1].
    pub fn traced_textures(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        texels: &[[f64; 2]],
        hs: &[f64],
        pose: &[f64],
    ) -> Result<Var, FieldError> {
        let (x, _) = self.traced_inputs(tape, texels, hs, pose, self.config.pose_texture, false)?;
        let (y, _) = self.traced_net(tape, &bound.texture, x, None);
        Ok(tape.sigmoid(y))
    }

    fn traced_inputs(
        &self,
        tape: &mut Tape,
        texels: &[[f64; 2]],
        hs: &[f64],
        pose: &[f64],
        pose_on: bool,
        tangents: bool,
    ) -> Result<(Var, Option<(Var, Var)>), FieldError> {
        self.check_pose(pose)?;
        let cfg = &self.config;
        if cfg.uvl {
            assert_eq!(hs.len(), texels.len(), "uvl needs one height per texel");
        }
        let d = cfg.input_dim();
        let s = texels.len();
        let mut x = vec![0.0; s * d];
        let (mut xu, mut xv) = if tangents {
            (vec![0.0; s * d], vec![0.0; s * d])
        } else {
            (Vec::new(), Vec::new())
        };
        for (i, t) in texels.iter().enumerate() {
            let (u, v) = checked_texel(t[0], t[1])?;
            let h = if cfg.uvl { hs[i] } else { 0.0 };
            let row = &mut x[i * d..(i + 1) * d];
            if tangents {
                let (ru, rv) = (&mut xu[i * d..(i + 1) * d], &mut xv[i * d..(i + 1) * d]);
                fill_row(cfg, u, v, h, pose, pose_on, row, Some((ru, rv)));
            } else {
                fill_row(cfg, u, v, h, pose, pose_on, row, None);
            }
        }
        let xv_ = tape.leaf(s, d, &x);
        let tang = if tangents {
            Some((tape.leaf(s, d, &xu), tape.leaf(s, d, &xv)))
        } else {
            None
        };
        Ok((xv_, tang))
    }

    /// Shared traced forward pass: all layers, activation on all but the
    /// last, tangent channels threaded through when present. Returns the
    /// pre-head output (and tangents).
    fn traced_net(
        &self,
        tape: &mut Tape,
        layers: &[(Var, Var)],
        mut x: Var,
        mut tang: Option<(Var, Var)>,
    ) -> (Var, Option<(Var, Var)>) {
        let last = layers.len() - 1;
        for (li, &(w, b)) in layers.iter().enumerate() {
            let mm = tape.matmul(x, w);
            let z = tape.add_row(mm, b);
            tang = tang.map(|(tu, tv)| (tape.matmul(tu, w), tape.matmul(tv, w)));
            if li != last {
                let zz = tape.mul(z, z);
                let zz1 = tape.add_const(zz, 1.0);
                let r = tape.sqrt(zz1);
                let zr = tape.add(z, r);
                x = tape.scale(zr, 0.5);
                tang = tang.map(|(tu, tv)| {
                    let rr = tape.recip(r);
                    let xr = tape.mul(z, rr);
                    let d1 = tape.add_const(xr, 1.0);
                    let dsp = tape.scale(d1, 0.5);
                    (tape.mul(tu, dsp), tape.mul(tv, dsp))
                });
            } else {
                x = z;
            }
        }
        (x, tang)
    }

    /// Add this tape's parameter gradients into a registry-length buffer.
    pub fn accumulate_grads(&self, tape: &Tape, bound: &Bound, out: &mut [f64]) {
        assert_eq!(out.len(), self.params.len());
        for &(var, start, len) in &bound.regs {
            if let Some(g) = tape.grad(var) {
                for (o, &gv) in out[start..start + len].iter_mut().zip(g) {
                    *o += gv;
                }
            }
        }
    }
}
