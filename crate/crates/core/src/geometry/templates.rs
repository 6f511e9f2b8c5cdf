//! Synthetic closed template meshes with invertible UV atlases.
//!
//! Both templates are latitude/longitude grids: `u` is azimuth, `v` runs
//! pole to pole. The seam column `u=1` duplicates the `u=0` vertices bitwise
//! (same position, different texel) so the atlas stays inside [0,1]^2 while
//! the mesh remains geometrically watertight. Poles are duplicated per
//! column for the same reason. Normals are assigned analytically.

use alloc::vec::Vec;

use super::{GeometryError, TemplateMesh};
use crate::math::{vec3, Vec3, PI, TAU};
#[cfg_attr(feature = "std", allow(unused_imports))]
use crate::math::FloatMath;

/// UV-mapped sphere. `level` controls resolution: 2^(level+1) latitude rows,
/// 2^(level+2) longitude columns (level 4 = 3968 faces).
pub fn sphere(level: u32, radius: f64) -> Result<TemplateMesh, GeometryError> {
    let rows = 1usize << (level + 1);
    let cols = 1usize << (level + 2);
    build_grid(
        rows,
        cols,
        |r| {
            let phi = PI * r as f64 / rows as f64;
            (radius * phi.sin(), radius * phi.cos())
        },
        |r, dir| {
            let phi = PI * r as f64 / rows as f64;
            vec3(phi.sin() * dir.x, phi.sin() * dir.y, phi.cos())
        },
    )
}

/// UV-mapped capsule along z: cylinder of half-length `half_len` and radius
/// `radius`, with hemispherical caps. One third of the v range per section.
pub fn capsule(level: u32, radius: f64, half_len: f64) -> Result<TemplateMesh, GeometryError> {
    let q = 1usize << level;
    let rows = 3 * q;
    let cols = 1usize << (level + 2);
    build_grid(
        rows,
        cols,
        |r| {
            if r <= q {
                let phi = 0.5 * PI * r as f64 / q as f64;
                (radius * phi.sin(), half_len + radius * phi.cos())
            } else if r <= 2 * q {
                let f = (r - q) as f64 / q as f64;
                (radius, half_len - 2.0 * half_len * f)
            } else {
                let phi = 0.5 * PI * (1.0 + (r - 2 * q) as f64 / q as f64);
                (radius * phi.sin(), -half_len + radius * phi.cos())
            }
        },
        |r, dir| {
            if r <= q {
                let phi = 0.5 * PI * r as f64 / q as f64;
                vec3(phi.sin() * dir.x, phi.sin() * dir.y, phi.cos())
            } else if r <= 2 * q {
                vec3(dir.x, dir.y, 0.0)
            } else {
                let phi = 0.5 * PI * (1.0 + (r - 2 * q) as f64 / q as f64);
                vec3(phi.sin() * dir.x, phi.sin() * dir.y, phi.cos())
            }
        },
    )
}

/// Shared lat-long grid construction. `profile` maps a row to (xy-radius, z);
/// `normal` maps (row, azimuth direction) to an outward normal.
fn build_grid(
    rows: usize,
    cols: usize,
    profile: impl Fn(usize) -> (f64, f64),
    normal: impl Fn(usize, Vec3) -> Vec3,
) -> Result<TemplateMesh, GeometryError> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut texel_of: Vec<Vec<[f64; 2]>> = Vec::new();
    let mut index: Vec<Vec<u32>> = Vec::new();

    // Interior rings; the seam column copies column 0 bitwise.
    for r in 1..rows {
        let mut ring = Vec::with_capacity(cols + 1);
        let mut ring_tex = Vec::with_capacity(cols + 1);
        let (rad, z) = profile(r);
        let v = r as f64 / rows as f64;
        let first = vertices.len() as u32;
        for c in 0..=cols {
            let u = c as f64 / cols as f64;
            if c == cols {
                let src = first as usize;
                vertices.push(vertices[src]);
                normals.push(normals[src]);
            } else {
                let lam = TAU * c as f64 / cols as f64;
                let dir = vec3(lam.cos(), lam.sin(), 0.0);
                vertices.push(vec3(rad * dir.x, rad * dir.y, z));
                normals.push(normal(r, dir).normalized());
            }
            ring.push(first + c as u32);
            ring_tex.push([u, v]);
        }
        index.push(ring);
        texel_of.push(ring_tex);
    }

    // Pole vertices, one per column so each fan face owns an in-range
    // texel strip.
    let (_, z_n) = profile(0);
    let (_, z_s) = profile(rows);
    let mut north = Vec::with_capacity(cols);
    let mut south = Vec::with_capacity(cols);
    for c in 0..cols {
        let u = (c as f64 + 0.5) / cols as f64;
        north.push((vertices.len() as u32, [u, 0.0]));
        vertices.push(vec3(0.0, 0.0, z_n));
        normals.push(vec3(0.0, 0.0, 1.0));
        south.push((vertices.len() as u32, [u, 1.0]));
        vertices.push(vec3(0.0, 0.0, z_s));
        normals.push(vec3(0.0, 0.0, -1.0));
    }

    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut face_texels: Vec<[[f64; 2]; 3]> = Vec::new();

    // North fan.
    for c in 0..cols {
        let (p, pt) = north[c];
        let a = index[0][c];
        let b = index[0][c + 1];
        faces.push([p, a, b]);
        face_texels.push([pt, texel_of[0][c], texel_of[0][c + 1]]);
    }
    // Quad bands.
    for band in 0..index.len().saturating_sub(1) {
        for c in 0..cols {
            let a = index[band][c];
            let b = index[band][c + 1];
            let d = index[band + 1][c];
            let e = index[band + 1][c + 1];
            faces.push([a, d, e]);
            face_texels.push([texel_of[band][c], texel_of[band + 1][c], texel_of[band + 1][c + 1]]);
            faces.push([a, e, b]);
            face_texels.push([texel_of[band][c], texel_of[band + 1][c + 1], texel_of[band][c + 1]]);
        }
    }
    // South fan.
    let last = index.len() - 1;
    for c in 0..cols {
        let (p, pt) = south[c];
        let a = index[last][c];
        let b = index[last][c + 1];
        faces.push([p, b, a]);
        face_texels.push([pt, texel_of[last][c + 1], texel_of[last][c]]);
    }

    TemplateMesh::new(vertices, faces, face_texels, normals)
}

/// Closed-form atlas decode shared with the synthetic ground-truth fields:
/// maps a texel to a unit-sphere embedding direction that is continuous
/// across the seam (u=0 and u=1 agree) and injective away from poles.
pub fn sphere_embedding(texel: [f64; 2]) -> Vec3 {
    let lam = TAU * texel[0];
    let phi = PI * texel[1];
    vec3(phi.sin() * lam.cos(), phi.sin() * lam.sin(), phi.cos())
}

/// Closed-form atlas decode for [`capsule`], mirroring its profile exactly:
/// v in [0, 1/3] is the top cap, [1/3, 2/3] the cylinder, [2/3, 1] the
/// bottom cap.
pub fn capsule_embedding(texel: [f64; 2], radius: f64, half_len: f64) -> Vec3 {
    let lam = TAU * texel[0];
    let dir = vec3(lam.cos(), lam.sin(), 0.0);
    let v = texel[1];
    let (rad, z) = if v <= 1.0 / 3.0 {
        let phi = 0.5 * PI * (3.0 * v);
        (radius * phi.sin(), half_len + radius * phi.cos())
    } else if v <= 2.0 / 3.0 {
        (radius, half_len - 2.0 * half_len * (3.0 * v - 1.0))
    } else {
        let phi = 0.5 * PI * (3.0 * v - 1.0);
        (radius * phi.sin(), -half_len + radius * phi.cos())
    };
    vec3(rad * dir.x, rad * dir.y, z)
}

/// Signed volume via the divergence theorem; positive for outward winding.
pub fn signed_volume(mesh: &TemplateMesh) -> f64 {
    let mut six_v = 0.0;
    for f in mesh.faces() {
        let a = mesh.vertices()[f[0] as usize];
        let b = mesh.vertices()[f[1] as usize];
        let c = mesh.vertices()[f[2] as usize];
        six_v += a.dot(b.cross(c));
    }
    six_v / 6.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_is_closed_and_outward() {
        let m = sphere(3, 1.0).unwrap();
        assert!(m.is_closed());
        let v = signed_volume(&m);
        let exact = 4.0 / 3.0 * PI;
        assert!(v > 0.9 * exact && v < exact, "volume {v} vs ball {exact}");
    }

    #[test]
    fn sphere_vertices_on_radius_with_radial_normals() {
        let m = sphere(4, 1.0).unwrap();
        for (v, n) in m.vertices().iter().zip(m.vertex_normals()) {
            assert!((v.length() - 1.0).abs() < 1e-12);
            assert!((*n - v.normalized()).length() < 1e-12);
        }
    }

    #[test]
    fn sphere_counts_match_grid() {
        let m = sphere(4, 1.0).unwrap();
        let rows = 32;
        let cols = 64;
        assert_eq!(m.vertices().len(), (rows - 1) * (cols + 1) + 2 * cols);
        assert_eq!(m.faces().len(), 2 * cols * (rows - 2) + 2 * cols);
    }

    #[test]
    fn capsule_is_closed_and_sized() {
        let m = capsule(3, 0.5, 0.5).unwrap();
        assert!(m.is_closed());
        assert!(signed_volume(&m) > 0.0);
        let (_, r) = m.bounding_sphere();
        assert!((r - 1.0).abs() < 1e-9, "bounding radius {r}");
        for v in m.vertices() {
            let horiz = (v.x * v.x + v.y * v.y).sqrt();
            assert!(horiz < 0.5 + 1e-12);
            assert!(v.z.abs() < 1.0 + 1e-12);
        }
    }

    #[test]
    fn capsule_normals_are_unit_and_continuous_at_junction() {
        let m = capsule(4, 0.5, 0.5).unwrap();
        for n in m.vertex_normals() {
            assert!((n.length() - 1.0).abs() < 1e-12);
        }
        // Cylinder rows must have horizontal normals.
        for (v, n) in m.vertices().iter().zip(m.vertex_normals()) {
            if v.z.abs() < 0.5 - 1e-9 && (v.x * v.x + v.y * v.y).sqrt() > 0.49 {
                assert!(n.z.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn embedding_matches_generator_positions() {
        let m = sphere(3, 1.0).unwrap();
        for (f, texels) in m.faces().iter().zip(m.face_texels()) {
            for k in 0..3 {
                let vert = m.vertices()[f[k] as usize];
                let t = texels[k];
                let e = sphere_embedding(t);
                assert!(
                    (e - vert.normalized()).length() < 1e-9,
                    "texel {t:?} embed {e:?} vert {vert:?}"
                );
            }
        }
    }

    #[test]
    fn capsule_embedding_matches_generator_positions() {
        let (radius, half_len) = (0.5, 0.7);
        let m = capsule(3, radius, half_len).unwrap();
        for (f, texels) in m.faces().iter().zip(m.face_texels()) {
            for k in 0..3 {
                let vert = m.vertices()[f[k] as usize];
                let t = texels[k];
                // Pole-fan center texels sit between columns; skip apexes,
                // which the azimuth cannot represent anyway (radius 0).
                let e = capsule_embedding(t, radius, half_len);
                assert!(
                    (e - vert).length() < 1e-9,
                    "texel {t:?} embed {e:?} vert {vert:?}"
                );
            }
        }
    }

    #[test]
    fn seam_and_pole_texels_stay_in_unit_square() {
        for m in [sphere(2, 1.0).unwrap(), capsule(2, 0.5, 0.5).unwrap()] {
            for tri in m.face_texels() {
                for t in tri {
                    assert!((0.0..=1.0).contains(&t[0]));
                    assert!((0.0..=1.0).contains(&t[1]));
                }
            }
        }
    }
}
