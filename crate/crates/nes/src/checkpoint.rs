//! Model checkpoints: a small binary format holding the field configuration
//! and the full parameter registry (log-sharpness included) as LE f64.

use std::fs;
use std::path::Path;

use nes_core::fields::{FieldConfig, FieldModel};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NESF";
const VERSION: u32 = 1;

fn flags_byte(c: &FieldConfig) -> u8 {
    (c.pose_offset as u8)
        | (c.pose_texture as u8) << 1
        | (c.refined as u8) << 2
        | (c.uvl as u8) << 3
}

pub fn save_model(path: &Path, model: &FieldModel) -> Result<()> {
    let c = model.config();
    let params = model.params();
    let mut out = Vec::with_capacity(44 + params.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.octaves, c.width, c.depth, c.d_pose] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.max_offset.to_le_bytes());
    out.push(flags_byte(c));
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, out).map_err(|source| Error::io(path, source))
}

pub fn load_model(path: &Path) -> Result<FieldModel> {
    let bytes = fs::read(path).map_err(|source| Error::io(path, source))?;
    let fail = |msg: &str| Error::Checkpoint { path: path.into(), msg: msg.into() };
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(at..at + n).ok_or_else(|| fail("truncated checkpoint"))?;
        at += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(fail("not a NESF checkpoint"));
    }
    let u32le = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    if u32le(take(4)?) != VERSION {
        return Err(fail("unsupported checkpoint version"));
    }
    let octaves = u32le(take(4)?) as usize;
    let width = u32le(take(4)?) as usize;
    let depth = u32le(take(4)?) as usize;
    let d_pose = u32le(take(4)?) as usize;
    let max_offset = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let flags = take(1)?[0];
    if flags > 0xf {
        return Err(fail("unknown flag bits set"));
    }
    let config = FieldConfig {
        octaves,
        width,
        depth,
        d_pose,
        max_offset,
        pose_offset: flags & 1 != 0,
        pose_texture: flags & 2 != 0,
        refined: flags & 4 != 0,
        uvl: flags & 8 != 0,
    };
    if octaves == 0 || width == 0 || depth == 0 || !(max_offset > 0.0) {
        return Err(fail("invalid field configuration"));
    }
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    if count != FieldModel::param_count_for(&config) {
        return Err(fail("parameter count does not match the configuration"));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        params.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
    }
    if at != bytes.len() {
        return Err(fail("trailing bytes after parameters"));
    }
    let mut model = FieldModel::new(config, 0);
    model.params_mut().copy_from_slice(&params);
    Ok(model)
}
