//! Error decomposition for a trained checkpoint against scene ground truth.
//! Splits holdout-view MSE into silhouette-mismatch and interior components
//! and reports field-level accuracy, to show what limits the PSNR.

use nes::checkpoint;
use nes_core::raster::{rasterize, render_rr};
use nes_core::scene::{SceneSpec, SyntheticScene};
use nes_core::training::offset_mae;

fn main() {
    let path = std::env::args().nth(1).expect("usage: diag <checkpoint.nesf>");
    let (model, _) = checkpoint::load(path.as_ref()).unwrap();
    let scene = SyntheticScene::generate(SceneSpec { seed: 7, ..SceneSpec::default() }).unwrap();

    let mae = offset_mae(&model, &scene, 64).unwrap();
    println!("offset mae (64x64 grid): {mae:.5}");

    // Vertex-level offset error drives the silhouette.
    let pose = &scene.poses_train[0];
    let gt_off = scene.gt_vertex_offsets(pose);
    let texels = scene.template.vertex_texels();
    let mut vmax: f64 = 0.0;
    let mut vsum = 0.0;
    for (t, g) in texels.iter().zip(&gt_off) {
        let l = model.eval_offset((t[0], t[1]), pose).unwrap();
        vmax = vmax.max((l - g).abs());
        vsum += (l - g).abs();
    }
    println!(
        "vertex offset err: mean {:.5} max {vmax:.5}",
        vsum / texels.len() as f64
    );

    for cam_idx in scene.holdout_camera_indices() {
        let cam = &scene.cameras[cam_idx];
        let (gt_img, gt_cov) = scene.render_gt(cam, pose);
        let (img, _) = render_rr(&scene.template, &model, pose, cam).unwrap();
        let uv = {
            let offs = scene.gt_vertex_offsets(pose);
            let (d, _) = scene.template.deform(&offs, 0.5).unwrap();
            rasterize(&d, cam)
        };
        let _ = &uv;

        let mut stats = [(0usize, 0.0f64); 3]; // both covered, coverage mismatch, near-edge
        let mut union = 0usize;
        for py in 0..cam.height {
            for px in 0..cam.width {
                let i = (py * cam.width + px) as usize;
                let rcov = img[i] != [0.0, 0.0, 0.0];
                if !gt_cov[i] && !rcov {
                    continue;
                }
                union += 1;
                let se: f64 = (0..3).map(|c| (img[i][c] - gt_img[i][c]).powi(2)).sum::<f64>() / 3.0;
                if gt_cov[i] != rcov {
                    stats[1].0 += 1;
                    stats[1].1 += se;
                } else {
                    // Near a coverage edge if any 8-neighbour differs in GT coverage.
                    let mut edge = false;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (nx, ny) = (px as i64 + dx, py as i64 + dy);
                            if nx < 0 || ny < 0 || nx >= cam.width as i64 || ny >= cam.height as i64
                            {
                                continue;
                            }
                            if gt_cov[(ny as u32 * cam.width + nx as u32) as usize] != gt_cov[i] {
                                edge = true;
                            }
                        }
                    }
                    let k = if edge { 2 } else { 0 };
                    stats[k].0 += 1;
                    stats[k].1 += se;
                }
            }
        }
        let mse: f64 = stats.iter().map(|s| s.1).sum::<f64>() / union as f64;
        println!(
            "cam {cam_idx}: union {union} px, psnr {:.2} dB | interior {} px mse {:.6} ({:.0}%) | cov-mismatch {} px mse-share {:.0}% | gt-edge ring {} px share {:.0}%",
            -10.0 * (mse.max(1e-12)).log10(),
            stats[0].0,
            stats[0].1 / stats[0].0.max(1) as f64,
            100.0 * stats[0].1 / (mse * union as f64),
            stats[1].0,
            100.0 * stats[1].1 / (mse * union as f64),
            stats[2].0,
            100.0 * stats[2].1 / (mse * union as f64),
        );
    }
}
