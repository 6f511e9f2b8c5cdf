//! PNG IO: linear f64 frames to 8-bit files and back, plus edit-mask loading.

use std::path::Path;

use image::{ImageFormat, RgbImage};
use nes_core::raster::TexelMask;

use crate::error::{Error, Result};

fn to_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a row-major RGB frame as an 8-bit PNG.
pub fn save_png(path: &Path, img: &[[f64; 3]], width: u32, height: u32) -> Result<()> {
    assert_eq!(img.len(), width as usize * height as usize);
    let mut bytes = Vec::with_capacity(img.len() * 3);
    for px in img {
        bytes.extend(px.map(to_byte));
    }
    let buf = RgbImage::from_raw(width, height, bytes).expect("sized above");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.into(), source })
}

/// Load a PNG back as a linear f64 frame.
pub fn load_png(path: &Path) -> Result<(Vec<[f64; 3]>, u32, u32)> {
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.into(), source })?
        .to_rgb8();
    let (width, height) = img.dimensions();
    let pixels = img
        .pixels()
        .map(|p| [0, 1, 2].map(|c| p.0[c] as f64 / 255.0))
        .collect();
    Ok((pixels, width, height))
}

/// Load an RGBA edit mask over texel space; a missing alpha channel reads
/// as fully opaque.
pub fn load_mask(path: &Path) -> Result<TexelMask> {
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.into(), source })?
        .to_rgba8();
    let (width, height) = img.dimensions();
    let rgba = img
        .pixels()
        .map(|p| [0, 1, 2, 3].map(|c| p.0[c] as f64 / 255.0))
        .collect();
    Ok(TexelMask::new(width, height, rgba)?)
}
