//! Scene synthesis on disk: GT images for every (camera, pose) pair, the
//! template OBJ, and the manifest tying them together.

use std::fs;
use std::path::{Path, PathBuf};

use nes_core::scene::{SceneSpec, SyntheticScene};
use nes_core::training::Split;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgio::save_png;
use crate::manifest::{image_entries, write_manifest, write_template_obj, ImageEntry};

fn dir_is_nonempty(dir: &Path) -> Result<bool> {
    match fs::read_dir(dir) {
        Ok(mut it) => Ok(it.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(Error::io(dir, e)),
    }
}

/// Generate a scene and write it under `out`: `manifest.txt`,
/// `template.obj`, and `images/`. Refuses to touch an existing non-empty
/// directory unless `force` is set.
pub fn synth_scene(out: &Path, spec: SceneSpec, force: bool) -> Result<(SyntheticScene, Vec<ImageEntry>)> {
    if !force && dir_is_nonempty(out)? {
        return Err(Error::invalid(format!(
            "output directory {} is not empty (pass --force to overwrite)",
            out.display()
        )));
    }
    fs::create_dir_all(out.join("images")).map_err(|e| Error::io(out, e))?;
    let scene = SyntheticScene::generate(spec)?;
    let images = image_entries(&scene.spec);
    images
        .par_iter()
        .try_for_each(|entry| -> Result<()> {
            let pose = match entry.split {
                Split::TrainPose => &scene.poses_train[entry.pose],
                Split::UnseenPose => &scene.poses_unseen[entry.pose],
            };
            let (img, _) = scene.render_gt(&scene.cameras[entry.camera], pose);
            save_png(&out.join(&entry.path), &img, scene.spec.width, scene.spec.height)
        })?;
    write_template_obj(&out.join("template.obj"), &scene.template)?;
    write_manifest(&out.join("manifest.txt"), &scene, &images)?;
    Ok((scene, images))
}

pub fn manifest_path(scene_dir: &Path) -> PathBuf {
    scene_dir.join("manifest.txt")
}
