//! Image-quality metrics: PSNR over masked pixel sets and mean SSIM with
//! the standard 11x11 Gaussian window (sigma 1.5, K1 = 0.01, K2 = 0.03),
//! both on [0,1] float images.

use alloc::vec;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use crate::math::FloatMath;

/// PSNR cap reported for exact matches (MSE = 0).
pub const PSNR_CAP: f64 = 99.0;

/// 10 log10(1 / mse) for unit dynamic range, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// Mean squared RGB error over masked pixels; None when the mask is empty.
pub fn masked_mse(a: &[[f64; 3]], b: &[[f64; 3]], mask: &[bool]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    assert_eq!(a.len(), mask.len());
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..a.len() {
        if mask[i] {
            for c in 0..3 {
                let d = a[i][c] - b[i][c];
                sum += d * d;
            }
            n += 1;
        }
    }
    (n > 0).then(|| sum / (3 * n) as f64)
}

const WIN: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_taps() -> [f64; WIN] {
    let mut t = [0.0; WIN];
    let mut sum = 0.0;
    for (i, v) in t.iter_mut().enumerate() {
        let x = i as f64 - (WIN as f64 - 1.0) / 2.0;
        *v = (-x * x / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    for v in &mut t {
        *v /= sum;
    }
    t
}

/// Separable 11-tap filter, valid region only: output is
/// (w - 10) x (h - 10).
fn filter_valid(img: &[f64], w: usize, h: usize, taps: &[f64; WIN]) -> Vec<f64> {
    let wv = w - WIN + 1;
    // Horizontal pass.
    let mut tmp = vec![0.0; wv * h];
    for y in 0..h {
        for x in 0..wv {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * img[y * w + x + k];
            }
            tmp[y * wv + x] = acc;
        }
    }
    let hv = h - WIN + 1;
    let mut out = vec![0.0; wv * hv];
    for y in 0..hv {
        for x in 0..wv {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * tmp[(y + k) * wv + x];
            }
            out[y * wv + x] = acc;
        }
    }
    out
}

/// Mean SSIM of two single-channel images over the valid filter region.
/// Images must be at least 11x11.
pub fn ssim(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    assert!(w >= WIN && h >= WIN, "image smaller than the SSIM window");
    assert_eq!(a.len(), w * h);
    assert_eq!(b.len(), w * h);
    let taps = gaussian_taps();
    let asq: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bsq: Vec<f64> = b.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, w, h, &taps);
    let mu_b = filter_valid(b, w, h, &taps);
    let e_asq = filter_valid(&asq, w, h, &taps);
    let e_bsq = filter_valid(&bsq, w, h, &taps);
    let e_ab = filter_valid(&ab, w, h, &taps);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_asq[i] - ma * ma;
        let vb = e_bsq[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let s = ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
            / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        total += s;
    }
    total / mu_a.len() as f64
}

/// Mean SSIM over the three RGB channels.
pub fn ssim_rgb(a: &[[f64; 3]], b: &[[f64; 3]], w: usize, h: usize) -> f64 {
    let mut acc = 0.0;
    let mut ch = vec![0.0; w * h];
    let mut ch2 = vec![0.0; w * h];
    for c in 0..3 {
        for i in 0..w * h {
            ch[i] = a[i][c];
            ch2[i] = b[i][c];
        }
        acc += ssim(&ch, &ch2, w, h);
    }
    acc / 3.0
}
