//! Signed distance conversion and the SDF-to-density map.
//!
//! A volume sample x is related to the deformed surface through its template
//! projection: s' = <x - x*, n> - l is the distance along the template
//! normal, and the tilt-corrected s = s' cos(alpha) accounts for the offset
//! surface not being parallel to the template, with tan(alpha) the worldspace
//! norm of the offset gradient. Density follows the Laplace-CDF-style map
//!
//!   sigma(s) = (1/beta)(1 - exp(s/beta)/2)   for s < 0
//!   sigma(s) = exp(-s/beta)/(2 beta)         for s >= 0
//!
//! which is C1 at s = 0. Exponents are saturated at +-60 so the inactive
//! branch of the traced blend stays finite; the error from saturation is
//! below 1e-25 in sigma.
//!
//! Traced and untraced forms use identical operation order, so the training
//! loss and the renderer see bitwise-equal densities.

use crate::autodiff::{Tape, Var};
use crate::geometry::SurfacePoint;
use crate::math::Vec3;
#[cfg_attr(feature = "std", allow(unused_imports))]
use crate::math::FloatMath;

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, thiserror::Error)]
pub enum ConversionError {
    #[error("beta must be positive, got {beta}")]
    NonPositiveBeta { beta: f64 },
}

/// Exponent saturation bound for the density map.
const EXP_SAT: f64 = 60.0;

/// One fully resolved conversion: the query point, its template projection,
/// the field outputs, and both distance flavors.
#[derive(Debug, Clone)]
pub struct ConversionSample {
    pub x: Vec3,
    pub surface: SurfacePoint,
    /// Offset l at the projected texel.
    pub offset: f64,
    /// Worldspace-scaled offset gradient (per arc length).
    pub grad_offset: [f64; 2],
    /// Raw perpendicular distance <x - x*, n> - l.
    pub s_prime: f64,
    /// Refined (or, unrefined ablation, raw) signed distance.
    pub s: f64,
    /// Tilt angle alpha = atan(|grad|).
    pub alpha: f64,
}

/// Eq. 4: s' from the normal-direction residual, then the cos(alpha)
/// refinement. `grad_offset` must already be in worldspace units
/// ([`crate::geometry::FaceMetric::world_gradient`]); `refined: false` is the
/// unrefined ablation which keeps s = s'.
pub fn signed_distance(
    x: Vec3,
    surface: &SurfacePoint,
    l: f64,
    grad_offset: [f64; 2],
    refined: bool,
) -> ConversionSample {
    let s_prime = (x - surface.position).dot(surface.normal) - l;
    let tan_sq = grad_offset[0] * grad_offset[0] + grad_offset[1] * grad_offset[1];
    let cos_alpha = 1.0 / (tan_sq + 1.0).sqrt();
    let s = if refined { s_prime * cos_alpha } else { s_prime };
    ConversionSample {
        x,
        surface: *surface,
        offset: l,
        grad_offset,
        s_prime,
        s,
        alpha: tan_sq.sqrt().atan2(1.0),
    }
}

/// Eq. 1 for a validated beta.
pub fn sdf_to_density(s: f64, beta: f64) -> Result<f64, ConversionError> {
    if !(beta > 0.0) {
        return Err(ConversionError::NonPositiveBeta { beta });
    }
    Ok(density(s, beta))
}

/// Eq. 1 hot path; callers validate beta once per render.
/// Operation order mirrors [`traced_density`] exactly.
pub(crate) fn density(s: f64, beta: f64) -> f64 {
    let xc = (s / beta).clamp(-EXP_SAT, EXP_SAT);
    if s < 0.0 {
        (xc.exp() * -0.5 + 1.0) / beta
    } else {
        ((xc * -1.0).exp() / beta) * 0.5
    }
}

/// Traced Eq. 1 over a column of signed distances. The branch selection is
/// frozen at the recorded values (a constant 0/1 blend); both branches agree
/// in value and first derivative at s = 0, so gradients stay consistent.
pub fn traced_density(tape: &mut Tape, s: Var, beta: Var) -> Var {
    let rows = tape.rows(s);
    let mut mask_neg = vec![0.0; rows];
    let mut mask_pos = vec![0.0; rows];
    for (i, &sv) in tape.value(s).iter().enumerate() {
        if sv < 0.0 {
            mask_neg[i] = 1.0;
        } else {
            mask_pos[i] = 1.0;
        }
    }
    let m_neg = tape.leaf(rows, 1, &mask_neg);
    let m_pos = tape.leaf(rows, 1, &mask_pos);

    let x = tape.div(s, beta);
    let xc = tape.clamp(x, -EXP_SAT, EXP_SAT);
    let e = tape.exp(xc);
    let he = tape.scale(e, -0.5);
    let he1 = tape.add_const(he, 1.0);
    let b_neg = tape.div(he1, beta);
    let xn = tape.scale(xc, -1.0);
    let en = tape.exp(xn);
    let eb = tape.div(en, beta);
    let b_pos = tape.scale(eb, 0.5);
    let n_side = tape.mul(b_neg, m_neg);
    let p_side = tape.mul(b_pos, m_pos);
    tape.add(n_side, p_side)
}

/// Traced Eq. 4 tilt refinement for a column of samples: maps per-texel
/// gradients through each sample's face metric (upper Cholesky rows
/// (u11, u12, u22)), then s = s' / sqrt(1 + tan^2). Mirrors the untraced
/// [`signed_distance`] arithmetic.
pub fn traced_refined_distance(
    tape: &mut Tape,
    s_prime: Var,
    gu: Var,
    gv: Var,
    chols: &[[f64; 3]],
) -> Var {
    let rows = tape.rows(s_prime);
    assert_eq!(chols.len(), rows);
    let mut c11 = Vec::with_capacity(rows);
    let mut c12 = Vec::with_capacity(rows);
    let mut c22 = Vec::with_capacity(rows);
    for c in chols {
        c11.push(c[0]);
        c12.push(c[1]);
        c22.push(c[2]);
    }
    let c11 = tape.leaf(rows, 1, &c11);
    let c12 = tape.leaf(rows, 1, &c12);
    let c22 = tape.leaf(rows, 1, &c22);
    let w0a = tape.mul(gu, c11);
    let w0b = tape.mul(gv, c12);
    let w0 = tape.add(w0a, w0b);
    let w1 = tape.mul(gv, c22);
    let w0s = tape.mul(w0, w0);
    let w1s = tape.mul(w1, w1);
    let tan_sq = tape.add(w0s, w1s);
    let t1 = tape.add_const(tan_sq, 1.0);
    let root = tape.sqrt(t1);
    let cos_a = tape.recip(root);
    tape.mul(s_prime, cos_a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FaceMetric;
    use crate::math::vec3;
    use proptest::prelude::*;

    fn flat_surface(u: f64, v: f64) -> SurfacePoint {
        SurfacePoint {
            face: 0,
            bary: [1.0, 0.0, 0.0],
            position: vec3(u, v, 0.0),
            normal: vec3(0.0, 0.0, 1.0),
            texel: [u, v],
        }
    }

    #[test]
    fn on_surface_point_is_zero() {
        let sp = flat_surface(0.3, 0.4);
        let c = signed_distance(sp.position, &sp, 0.0, [0.0, 0.0], true);
        assert_eq!(c.s_prime, 0.0);
        assert_eq!(c.s, 0.0);
        assert_eq!(c.alpha, 0.0);
    }

    #[test]
    fn along_normal_untilted_is_exact_height() {
        let sp = flat_surface(0.2, 0.7);
        for t in [-0.4, 0.05, 1.3] {
            let x = sp.position + sp.normal * t;
            let c = signed_distance(x, &sp, 0.0, [0.0, 0.0], true);
            assert!((c.s - t).abs() < 1e-15);
            assert_eq!(c.s, c.s_prime);
        }
    }

    /// Planar template z = 0 with worldspace texels and ramp offset
    /// l(u,v) = u - 0.25 (worldspace slope 1, alpha = 45 degrees): for query
    /// points along the template normal the refined s must equal the true
    /// Euclidean distance to the ramp plane z = x - 0.25, which is s'/sqrt(2),
    /// while the unrefined ablation returns s' (a sqrt(2) overestimate).
    #[test]
    fn ramp_plane_distance_oracle() {
        let slope = 1.0;
        let c0 = 0.25;
        for &(u, v, t) in &[(0.3, 0.6, 0.5), (0.7, 0.2, -0.3), (0.1, 0.9, 0.02)] {
            let sp = flat_surface(u, v);
            let x = sp.position + sp.normal * t;
            let l = slope * u - c0;
            let grad = [slope, 0.0];
            let refined = signed_distance(x, &sp, l, grad, true);
            let raw = signed_distance(x, &sp, l, grad, false);

            // True point-plane distance for plane z - x + c0 = 0.
            let true_dist = (t - u + c0) / 2.0f64.sqrt();
            assert!((refined.s - true_dist).abs() < 1e-9, "{} vs {true_dist}", refined.s);
            assert!((refined.alpha - crate::math::PI / 4.0).abs() < 1e-12);
            assert_eq!(raw.s, raw.s_prime);
            assert!((raw.s / refined.s - 2.0f64.sqrt()).abs() < 1e-9);
        }
    }

    /// The refinement composes with the face metric: stretching the texel
    /// atlas must not change alpha. A face with texel edges twice as long
    /// per worldspace unit halves the per-texel gradient scale.
    #[test]
    fn metric_mapping_makes_alpha_atlas_invariant() {
        // Identity face: texel units equal worldspace units.
        let ident = FaceMetric { chol: [1.0, 0.0, 1.0], degenerate: false };
        // Texel u axis stretched: one worldspace unit spans 2 texel units,
        // so d l/du in texel units is half the worldspace slope.
        let stretched = FaceMetric { chol: [2.0, 0.0, 1.0], degenerate: false };
        let w_ident = ident.world_gradient([1.0, 0.0]);
        let w_stretched = stretched.world_gradient([0.5, 0.0]);
        assert!((w_ident[0] - w_stretched[0]).abs() < 1e-15);
        assert!((w_ident[1] - w_stretched[1]).abs() < 1e-15);
    }

    #[test]
    fn density_branch_values_match_reference_points() {
        // Continuity point: both branches give 1/(2 beta).
        let at0 = sdf_to_density(0.0, 0.1).unwrap();
        assert!((at0 - 5.0).abs() < 1e-12);
        // Deep inside: the 1/beta limit (reached exactly once the saturated
        // exponential drops below one ulp of 1.0).
        let deep = sdf_to_density(-1000.0, 0.1).unwrap();
        assert!((deep - 10.0).abs() < 1e-9);
        // Direct evaluation one beta outside.
        let out = sdf_to_density(0.1, 0.1).unwrap();
        assert!((out - 5.0 * (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn non_positive_beta_is_rejected() {
        assert!(matches!(
            sdf_to_density(0.0, 0.0),
            Err(ConversionError::NonPositiveBeta { .. })
        ));
        assert!(sdf_to_density(0.0, -0.5).is_err());
        assert!(sdf_to_density(0.0, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn density_is_monotone_bounded_and_continuous(
            s1 in -20.0f64..20.0,
            ds in 0.0f64..5.0,
            beta in 0.01f64..2.0,
        ) {
            let s2 = s1 + ds;
            let d1 = sdf_to_density(s1, beta).unwrap();
            let d2 = sdf_to_density(s2, beta).unwrap();
            prop_assert!(d1 >= d2);
            for d in [d1, d2] {
                prop_assert!(d > 0.0);
                prop_assert!(d <= 1.0 / beta);
            }
            // Branch seam: values straddling 0 stay within the Lipschitz
            // bound 1/(2 beta^2) of each other.
            let eps = 1e-9;
            let below = sdf_to_density(-eps, beta).unwrap();
            let above = sdf_to_density(eps, beta).unwrap();
            prop_assert!((below - above).abs() <= 2.0 * eps / (2.0 * beta * beta) + 1e-12);
        }

        #[test]
        fn refined_never_exceeds_raw_and_keeps_sign(
            sp_t in -2.0f64..2.0,
            l in -0.5f64..0.5,
            g0 in -3.0f64..3.0,
            g1 in -3.0f64..3.0,
        ) {
            let sp = flat_surface(0.5, 0.5);
            let x = sp.position + sp.normal * sp_t;
            let c = signed_distance(x, &sp, l, [g0, g1], true);
            prop_assert!(c.s.abs() <= c.s_prime.abs() + 1e-15);
            prop_assert!(c.s == 0.0 || c.s.signum() == c.s_prime.signum());
            prop_assert!(c.alpha >= 0.0 && c.alpha < crate::math::PI / 2.0);
        }
    }

    #[test]
    fn traced_density_matches_untraced_bitwise() {
        let svals = [-0.35, -0.001, 0.0, 0.02, 0.5, -8.0, 9.0];
        let beta = 0.13;
        let mut tape = Tape::new();
        let ln_b = tape.param(1, 1, &[beta.ln()]);
        let b = tape.exp(ln_b);
        let s = tape.leaf(svals.len(), 1, &svals);
        let sig = traced_density(&mut tape, s, b);
        let bv = tape.value(b)[0];
        for (i, &sv) in svals.iter().enumerate() {
            assert_eq!(tape.value(sig)[i], density(sv, bv));
        }
    }

    /// d sigma / d s and d sigma / d ln(beta) against central differences,
    /// including points on both branches.
    #[test]
    fn traced_density_gradients_match_fd() {
        let svals = [-0.35, -0.02, 0.01, 0.4];
        let ln_beta = 0.13f64.ln();
        let eval = |sv: &[f64], lb: f64| -> f64 {
            let mut t = Tape::new();
            let ln_b = t.param(1, 1, &[lb]);
            let b = t.exp(ln_b);
            let s = t.param(sv.len(), 1, sv);
            let sig = traced_density(&mut t, s, b);
            let w = t.leaf(sv.len(), 1, &[1.0, 2.0, 3.0, 4.0]);
            let m = t.mul(sig, w);
            let loss = t.sum(m);
            t.value(loss)[0]
        };

        let mut tape = Tape::new();
        let ln_b = tape.param(1, 1, &[ln_beta]);
        let b = tape.exp(ln_b);
        let s = tape.param(svals.len(), 1, &svals);
        let sig = traced_density(&mut tape, s, b);
        let w = tape.leaf(svals.len(), 1, &[1.0, 2.0, 3.0, 4.0]);
        let m = tape.mul(sig, w);
        let loss = tape.sum(m);
        tape.backward(loss);
        let gs = tape.grad(s).unwrap().to_vec();
        let gb = tape.grad(ln_b).unwrap()[0];

        let h = 1e-7;
        for i in 0..svals.len() {
            let mut sp = svals;
            sp[i] += h;
            let mut sm = svals;
            sm[i] -= h;
            let fd = (eval(&sp, ln_beta) - eval(&sm, ln_beta)) / (2.0 * h);
            let denom = fd.abs().max(gs[i].abs()).max(1e-8);
            assert!((fd - gs[i]).abs() / denom < 1e-4, "s[{i}]: {} vs {fd}", gs[i]);
        }
        let fd_b = (eval(&svals, ln_beta + h) - eval(&svals, ln_beta - h)) / (2.0 * h);
        let denom = fd_b.abs().max(gb.abs()).max(1e-8);
        assert!((fd_b - gb).abs() / denom < 1e-4, "beta: {gb} vs {fd_b}");
    }

    #[test]
    fn traced_refinement_matches_untraced() {
        let sp_vals = [0.4, -0.3, 0.05];
        let gu_vals = [0.8, -1.2, 0.0];
        let gv_vals = [-0.5, 0.3, 0.0];
        let chols = [[1.0, 0.2, 0.9], [2.0, -0.1, 1.5], [1.0, 0.0, 1.0]];
        let mut tape = Tape::new();
        let sp = tape.leaf(3, 1, &sp_vals);
        let gu = tape.param(3, 1, &gu_vals);
        let gv = tape.param(3, 1, &gv_vals);
        let s = traced_refined_distance(&mut tape, sp, gu, gv, &chols);
        for i in 0..3 {
            let m = FaceMetric { chol: chols[i], degenerate: false };
            let w = m.world_gradient([gu_vals[i], gv_vals[i]]);
            let surface = flat_surface(0.5, 0.5);
            let x = surface.position + surface.normal * sp_vals[i];
            let want = signed_distance(x, &surface, 0.0, w, true);
            assert_eq!(tape.value(s)[i], want.s);
        }
    }
}
