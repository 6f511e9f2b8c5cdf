//! Template mesh, UV coordinate casting (nearest-point projection) and
//! pose-driven vertex deformation.
//!
//! The template is the fixed reference surface. Every 3D query point is
//! projected to its nearest surface point, which carries a texel coordinate
//! `(u,v)` into the 2D neural fields; offsets deform the template along its
//! vertex normals.

pub mod bvh;
pub mod templates;

use alloc::vec;
use alloc::vec::Vec;

use crate::math::Vec3;
#[cfg_attr(feature = "std", allow(unused_imports))]
use crate::math::FloatMath;
use bvh::{Bvh, ClosestHit, RayHit};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("face index {face} out of range ({faces} faces)")]
    InvalidFaceIndex { face: usize, faces: usize },
    #[error("face {face} references vertex {vertex} out of range ({vertices} vertices)")]
    VertexIndexOutOfRange {
        face: usize,
        vertex: usize,
        vertices: usize,
    },
    #[error("barycentric weights sum to {sum}, expected 1")]
    BarycentricSum { sum: f64 },
    #[error("barycentric weight {value} is negative")]
    BarycentricNegative { value: f64 },
    #[error("face {face} texel ({u}, {v}) outside [0,1]^2")]
    TexelOutOfRange { face: usize, u: f64, v: f64 },
    #[error("vertex {vertex} normal has length {len}, expected 1")]
    NonUnitNormal { vertex: usize, len: f64 },
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("array length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// A ray with unit direction.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Nearest point on the template surface for some query point.
#[derive(Debug, Clone, Copy)]
pub struct SurfacePoint {
    pub face: u32,
    pub bary: [f64; 3],
    /// x*: the projected position on the surface.
    pub position: Vec3,
    /// n: smooth-shaded unit normal (interpolated vertex normals).
    pub normal: Vec3,
    /// (u,v): texel coordinates cast from the face's texel triple.
    pub texel: [f64; 2],
}

/// Per-face map from texel-space offset gradients to worldspace slope.
///
/// `chol` is the upper-triangular factor U of the inverse first fundamental
/// form (G^T G)^-1 = U^T U, where G is the face's texel-to-world Jacobian.
/// For a texel gradient g, tan(alpha) = |U g|, which is invariant to how the
/// UV atlas scales or shears the face.
#[derive(Debug, Clone, Copy)]
pub struct FaceMetric {
    pub chol: [f64; 3],
    pub degenerate: bool,
}

impl FaceMetric {
    /// Worldspace slope (tan alpha) of an offset field with texel-space
    /// gradient `g` on this face, and the mapped 2D worldspace gradient.
    #[inline]
    pub fn world_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        let [a, b, c] = self.chol;
        [a * g[0] + b * g[1], c * g[1]]
    }
}

pub(crate) struct TriAccel {
    tri_verts: Vec<[Vec3; 3]>,
    degenerate: Vec<bool>,
    bvh: Bvh,
}

impl TriAccel {
    fn new(vertices: &[Vec3], faces: &[[u32; 3]]) -> TriAccel {
        let tri_verts: Vec<[Vec3; 3]> = faces
            .iter()
            .map(|f| {
                [
                    vertices[f[0] as usize],
                    vertices[f[1] as usize],
                    vertices[f[2] as usize],
                ]
            })
            .collect();
        let degenerate: Vec<bool> = tri_verts
            .iter()
            .map(|t| (t[1] - t[0]).cross(t[2] - t[0]).length_sq() < 1e-24)
            .collect();
        let bvh = Bvh::build(&tri_verts);
        TriAccel {
            tri_verts,
            degenerate,
            bvh,
        }
    }

    #[inline]
    fn closest(&self, p: Vec3, seed: Option<u32>) -> ClosestHit {
        self.bvh
            .closest_point(&self.tri_verts, &self.degenerate, p, seed)
            .expect("non-empty mesh")
    }

    #[inline]
    fn ray(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> Option<RayHit> {
        self.bvh.first_hit(&self.tri_verts, origin, dir, t_min, t_max)
    }
}

/// UV-atlased closed triangle mesh serving as the reference surface.
pub struct TemplateMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    face_texels: Vec<[[f64; 2]; 3]>,
    vertex_normals: Vec<Vec3>,
    face_metrics: Vec<FaceMetric>,
    /// Canonical texel per vertex: the texel it has in its lowest-index
    /// incident face (seam vertices own several texels; Eq. 5 needs one).
    vertex_texels: Vec<[f64; 2]>,
    accel: TriAccel,
    bound_center: Vec3,
    bound_radius: f64,
}

impl TemplateMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        face_texels: Vec<[[f64; 2]; 3]>,
        vertex_normals: Vec<Vec3>,
    ) -> Result<TemplateMesh, GeometryError> {
        if faces.is_empty() {
            return Err(GeometryError::EmptyMesh);
        }
        if face_texels.len() != faces.len() {
            return Err(GeometryError::LengthMismatch {
                expected: faces.len(),
                got: face_texels.len(),
            });
        }
        if vertex_normals.len() != vertices.len() {
            return Err(GeometryError::LengthMismatch {
                expected: vertices.len(),
                got: vertex_normals.len(),
            });
        }
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v as usize >= vertices.len() {
                    return Err(GeometryError::VertexIndexOutOfRange {
                        face: fi,
                        vertex: v as usize,
                        vertices: vertices.len(),
                    });
                }
            }
            for t in &face_texels[fi] {
                if !(0.0..=1.0).contains(&t[0]) || !(0.0..=1.0).contains(&t[1]) {
                    return Err(GeometryError::TexelOutOfRange {
                        face: fi,
                        u: t[0],
                        v: t[1],
                    });
                }
            }
        }
        for (vi, n) in vertex_normals.iter().enumerate() {
            let len = n.length();
            if (len - 1.0).abs() > 1e-9 {
                return Err(GeometryError::NonUnitNormal { vertex: vi, len });
            }
        }

        let face_metrics = faces
            .iter()
            .zip(&face_texels)
            .map(|(f, t)| {
                face_metric(
                    [
                        vertices[f[0] as usize],
                        vertices[f[1] as usize],
                        vertices[f[2] as usize],
                    ],
                    *t,
                )
            })
            .collect();

        let mut vertex_texels = vec![[f64::NAN, f64::NAN]; vertices.len()];
        let mut seen = vec![false; vertices.len()];
        for (f, t) in faces.iter().zip(&face_texels) {
            for k in 0..3 {
                let v = f[k] as usize;
                if !seen[v] {
                    seen[v] = true;
                    vertex_texels[v] = t[k];
                }
            }
        }
        // Vertices not referenced by any face never get queried; park them at
        // the atlas origin so the array stays finite.
        for (v, s) in vertex_texels.iter_mut().zip(&seen) {
            if !s {
                *v = [0.0, 0.0];
            }
        }

        let accel = TriAccel::new(&vertices, &faces);
        let (bound_center, bound_radius) = bounding_sphere(&vertices);

        Ok(TemplateMesh {
            vertices,
            faces,
            face_texels,
            vertex_normals,
            face_metrics,
            vertex_texels,
            accel,
            bound_center,
            bound_radius,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn face_texels(&self) -> &[[[f64; 2]; 3]] {
        &self.face_texels
    }

    pub fn vertex_normals(&self) -> &[Vec3] {
        &self.vertex_normals
    }

    pub fn vertex_texels(&self) -> &[[f64; 2]] {
        &self.vertex_texels
    }

    pub fn face_metric(&self, face: u32) -> &FaceMetric {
        &self.face_metrics[face as usize]
    }

    /// Center and radius of a sphere enclosing all vertices.
    pub fn bounding_sphere(&self) -> (Vec3, f64) {
        (self.bound_center, self.bound_radius)
    }

    /// Nearest point on the surface (UV coordinate casting). Total: every
    /// finite query point has a projection. `seed` accelerates coherent
    /// query sequences and never changes the result.
    pub fn project_to_surface(&self, x: Vec3) -> SurfacePoint {
        self.project_seeded(x, None)
    }

    pub fn project_seeded(&self, x: Vec3, seed: Option<u32>) -> SurfacePoint {
        let hit = self.accel.closest(x, seed);
        self.surface_point(hit)
    }

    fn surface_point(&self, hit: ClosestHit) -> SurfacePoint {
        let f = hit.face as usize;
        let [i0, i1, i2] = self.faces[f];
        let b = hit.bary;
        let position = self.vertices[i0 as usize] * b[0]
            + self.vertices[i1 as usize] * b[1]
            + self.vertices[i2 as usize] * b[2];
        let normal = (self.vertex_normals[i0 as usize] * b[0]
            + self.vertex_normals[i1 as usize] * b[1]
            + self.vertex_normals[i2 as usize] * b[2])
            .normalized();
        let t = &self.face_texels[f];
        let texel = [
            (t[0][0] * b[0] + t[1][0] * b[1] + t[2][0] * b[2]).clamp(0.0, 1.0),
            (t[0][1] * b[0] + t[1][1] * b[1] + t[2][1] * b[2]).clamp(0.0, 1.0),
        ];
        SurfacePoint {
            face: hit.face,
            bary: b,
            position,
            normal,
            texel,
        }
    }

    pub fn first_hit(&self, ray: &Ray) -> Option<RayHit> {
        self.accel.ray(ray.origin, ray.dir, 1e-9, f64::INFINITY)
    }

    /// True when every (position-keyed) edge is shared by exactly two faces
    /// with opposite orientation, i.e. the mesh bounds a solid. Positions are
    /// keyed bitwise, so duplicated seam vertices must copy their twins.
    pub fn is_closed(&self) -> bool {
        use alloc::collections::BTreeMap;
        let key = |v: Vec3| -> [u64; 3] {
            let z = |x: f64| if x == 0.0 { 0.0f64 } else { x }.to_bits();
            [z(v.x), z(v.y), z(v.z)]
        };
        let mut edges: BTreeMap<([u64; 3], [u64; 3]), (i32, i32)> = BTreeMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let a = key(self.vertices[f[k] as usize]);
                let b = key(self.vertices[f[(k + 1) % 3] as usize]);
                if a == b {
                    return false;
                }
                let (lo, hi, forward) = if a < b { (a, b, true) } else { (b, a, false) };
                let e = edges.entry((lo, hi)).or_insert((0, 0));
                if forward {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                }
            }
        }
        edges.values().all(|&(f, r)| f == 1 && r == 1)
    }

    /// Deform per Eq. 5: x' = x + l*n, with |l| clamped to `max_offset`.
    /// Returns the deformed mesh and how many offsets needed clamping.
    pub fn deform(&self, offsets: &[f64], max_offset: f64) -> Result<(DeformedMesh, usize), GeometryError> {
        deform_vertices(self, offsets, max_offset)
    }
}

/// Mesh with the template's topology and displaced vertices.
pub struct DeformedMesh {
    vertices: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    face_texels: Vec<[[f64; 2]; 3]>,
    accel: TriAccel,
}

impl DeformedMesh {
    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn vertex_normals(&self) -> &[Vec3] {
        &self.vertex_normals
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn face_texels(&self) -> &[[[f64; 2]; 3]] {
        &self.face_texels
    }

    pub fn first_hit(&self, ray: &Ray) -> Option<RayHit> {
        self.accel.ray(ray.origin, ray.dir, 1e-9, f64::INFINITY)
    }

    pub fn first_hit_from(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<RayHit> {
        self.accel.ray(ray.origin, ray.dir, t_min, t_max)
    }
}

/// b0*v0 + b1*v1 + b2*v2 over the face's vertices (Eq. 3).
pub fn barycentric_interp(
    mesh: &TemplateMesh,
    face: usize,
    bary: [f64; 3],
) -> Result<Vec3, GeometryError> {
    if face >= mesh.faces.len() {
        return Err(GeometryError::InvalidFaceIndex {
            face,
            faces: mesh.faces.len(),
        });
    }
    let sum = bary[0] + bary[1] + bary[2];
    if (sum - 1.0).abs() > 1e-6 {
        return Err(GeometryError::BarycentricSum { sum });
    }
    for &b in &bary {
        if b < 0.0 {
            return Err(GeometryError::BarycentricNegative { value: b });
        }
    }
    let [i0, i1, i2] = mesh.faces[face];
    Ok(mesh.vertices[i0 as usize] * bary[0]
        + mesh.vertices[i1 as usize] * bary[1]
        + mesh.vertices[i2 as usize] * bary[2])
}

/// Eq. 5 applied at every vertex, with recomputed area-weighted normals.
pub fn deform_vertices(
    mesh: &TemplateMesh,
    offsets: &[f64],
    max_offset: f64,
) -> Result<(DeformedMesh, usize), GeometryError> {
    if offsets.len() != mesh.vertices.len() {
        return Err(GeometryError::LengthMismatch {
            expected: mesh.vertices.len(),
            got: offsets.len(),
        });
    }
    let mut clamped = 0usize;
    let vertices: Vec<Vec3> = mesh
        .vertices
        .iter()
        .zip(offsets)
        .zip(&mesh.vertex_normals)
        .map(|((&v, &l), &n)| {
            let l = if l.abs() > max_offset {
                clamped += 1;
                l.clamp(-max_offset, max_offset)
            } else {
                l
            };
            v + n * l
        })
        .collect();
    let vertex_normals = area_weighted_normals(&vertices, &mesh.faces);
    let accel = TriAccel::new(&vertices, &mesh.faces);
    Ok((
        DeformedMesh {
            vertices,
            vertex_normals,
            faces: mesh.faces.clone(),
            face_texels: mesh.face_texels.clone(),
            accel,
        },
        clamped,
    ))
}

/// Vertex normals as the normalized sum of incident face cross products
/// (the cross product length is twice the face area, so this is the usual
/// area weighting).
pub fn area_weighted_normals(vertices: &[Vec3], faces: &[[u32; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::ZERO; vertices.len()];
    for f in faces {
        let a = vertices[f[0] as usize];
        let b = vertices[f[1] as usize];
        let c = vertices[f[2] as usize];
        let n = (b - a).cross(c - a);
        acc[f[0] as usize] += n;
        acc[f[1] as usize] += n;
        acc[f[2] as usize] += n;
    }
    for n in &mut acc {
        *n = n.normalized();
    }
    acc
}

fn bounding_sphere(vertices: &[Vec3]) -> (Vec3, f64) {
    let mut aabb = bvh::Aabb::EMPTY;
    for &v in vertices {
        aabb.grow_point(v);
    }
    let center = aabb.centroid();
    let radius = vertices
        .iter()
        .map(|v| (*v - center).length())
        .fold(0.0, f64::max);
    (center, radius)
}

fn face_metric(p: [Vec3; 3], t: [[f64; 2]; 3]) -> FaceMetric {
    let e1 = p[1] - p[0];
    let e2 = p[2] - p[0];
    let g11 = e1.dot(e1);
    let g12 = e1.dot(e2);
    let g22 = e2.dot(e2);
    let area_sq = g11 * g22 - g12 * g12;
    let d = [[t[1][0] - t[0][0], t[2][0] - t[0][0]], [t[1][1] - t[0][1], t[2][1] - t[0][1]]];
    let det_d = d[0][0] * d[1][1] - d[0][1] * d[1][0];
    if area_sq < 1e-24 || det_d.abs() < 1e-14 {
        return FaceMetric {
            chol: [0.0, 0.0, 0.0],
            degenerate: true,
        };
    }
    // A = D (E^T E)^-1 D^T, the inverse metric expressed in texel coordinates.
    let inv = [
        [g22 / area_sq, -g12 / area_sq],
        [-g12 / area_sq, g11 / area_sq],
    ];
    let mut a = [[0.0f64; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..2 {
                for m in 0..2 {
                    s += d[i][k] * inv[k][m] * d[j][m];
                }
            }
            a[i][j] = s;
        }
    }
    let u11 = a[0][0].max(0.0).sqrt();
    if u11 <= 0.0 {
        return FaceMetric {
            chol: [0.0, 0.0, 0.0],
            degenerate: true,
        };
    }
    let u12 = a[0][1] / u11;
    let u22 = (a[1][1] - u12 * u12).max(0.0).sqrt();
    FaceMetric {
        chol: [u11, u12, u22],
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Unit quad in the z=0 plane, texels equal to (x,y).
    pub(crate) fn plane_mesh() -> TemplateMesh {
        let vertices = vec![
            vec3(0.0, 0.0, 0.0),
            vec3(1.0, 0.0, 0.0),
            vec3(1.0, 1.0, 0.0),
            vec3(0.0, 1.0, 0.0),
        ];
        let faces = vec![[0, 1, 2], [0, 2, 3]];
        let face_texels = vec![
            [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
            [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        ];
        let normals = vec![vec3(0.0, 0.0, 1.0); 4];
        TemplateMesh::new(vertices, faces, face_texels, normals).unwrap()
    }

    #[test]
    fn barycentric_interp_matches_weighted_sum() {
        let mesh = plane_mesh();
        let v0 = barycentric_interp(&mesh, 0, [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(v0, mesh.vertices()[0]);
        let centroid = barycentric_interp(&mesh, 0, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        let expect = (mesh.vertices()[0] + mesh.vertices()[1] + mesh.vertices()[2]) / 3.0;
        assert!((centroid - expect).length() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a: f64 = rng.gen_range(0.0..1.0);
            let b: f64 = rng.gen_range(0.0..1.0 - a);
            let bary = [a, b, 1.0 - a - b];
            let got = barycentric_interp(&mesh, 1, bary).unwrap();
            let [i0, i1, i2] = mesh.faces()[1];
            let want = mesh.vertices()[i0 as usize] * bary[0]
                + mesh.vertices()[i1 as usize] * bary[1]
                + mesh.vertices()[i2 as usize] * bary[2];
            assert!((got - want).length() < 1e-15);
        }
    }

    #[test]
    fn barycentric_interp_rejects_bad_input() {
        let mesh = plane_mesh();
        assert!(matches!(
            barycentric_interp(&mesh, 9, [1.0, 0.0, 0.0]),
            Err(GeometryError::InvalidFaceIndex { .. })
        ));
        assert!(matches!(
            barycentric_interp(&mesh, 0, [0.7, 0.7, 0.7]),
            Err(GeometryError::BarycentricSum { .. })
        ));
        assert!(matches!(
            barycentric_interp(&mesh, 0, [1.5, -0.5, 0.0]),
            Err(GeometryError::BarycentricNegative { .. })
        ));
    }

    #[test]
    fn projection_of_on_surface_point_is_identity() {
        let mesh = plane_mesh();
        let x = vec3(0.3, 0.4, 0.0);
        let sp = mesh.project_to_surface(x);
        assert!((sp.position - x).length() < 1e-12);
        assert!((sp.texel[0] - 0.3).abs() < 1e-12);
        assert!((sp.texel[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn projection_drops_perpendicular() {
        let mesh = plane_mesh();
        let sp = mesh.project_to_surface(vec3(0.25, 0.6, 0.8));
        assert!((sp.position - vec3(0.25, 0.6, 0.0)).length() < 1e-12);
        assert!((sp.normal - vec3(0.0, 0.0, 1.0)).length() < 1e-12);
        let b = sp.bary;
        assert!((b[0] + b[1] + b[2] - 1.0).abs() < 1e-9);
        assert!(b.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
    }

    #[test]
    fn projection_matches_brute_force_scan() {
        let mesh = templates::sphere(3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let x = vec3(
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            );
            let sp = mesh.project_to_surface(x);
            let mut best = f64::INFINITY;
            for f in 0..mesh.faces().len() {
                let tri = [
                    mesh.vertices()[mesh.faces()[f][0] as usize],
                    mesh.vertices()[mesh.faces()[f][1] as usize],
                    mesh.vertices()[mesh.faces()[f][2] as usize],
                ];
                let (q, _) = bvh::closest_point_triangle(x, &tri);
                best = best.min((x - q).length());
            }
            assert!(
                ((x - sp.position).length() - best).abs() < 1e-9,
                "projection distance {} vs brute {}",
                (x - sp.position).length(),
                best
            );
        }
    }

    #[test]
    fn eq3_roundtrip_recovers_generated_point() {
        let mesh = templates::sphere(3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let f = rng.gen_range(0..mesh.faces().len());
            let a: f64 = rng.gen_range(0.0..1.0);
            let b: f64 = rng.gen_range(0.0..1.0 - a);
            let x = barycentric_interp(&mesh, f, [a, b, 1.0 - a - b]).unwrap();
            let sp = mesh.project_to_surface(x);
            assert!(
                (sp.position - x).length() < 1e-9,
                "roundtrip moved point by {}",
                (sp.position - x).length()
            );
        }
    }

    #[test]
    fn deform_zero_offsets_is_identity() {
        let mesh = templates::sphere(2, 1.0).unwrap();
        let offsets = vec![0.0; mesh.vertices().len()];
        let (d, clamped) = mesh.deform(&offsets, 0.5).unwrap();
        assert_eq!(clamped, 0);
        for (a, b) in d.vertices().iter().zip(mesh.vertices()) {
            assert_eq!(a, b);
        }
        assert_eq!(d.faces(), mesh.faces());
        assert_eq!(d.face_texels(), mesh.face_texels());
    }

    #[test]
    fn deform_constant_offset_inflates_sphere() {
        let mesh = templates::sphere(3, 1.0).unwrap();
        let offsets = vec![0.1; mesh.vertices().len()];
        let (d, clamped) = mesh.deform(&offsets, 0.5).unwrap();
        assert_eq!(clamped, 0);
        for v in d.vertices() {
            assert!((v.length() - 1.1).abs() < 1e-9);
        }
    }

    #[test]
    fn deform_matches_per_vertex_oracle_and_clamps() {
        let mesh = templates::sphere(2, 1.0).unwrap();
        let offsets: Vec<f64> = mesh
            .vertices()
            .iter()
            .map(|v| 0.2 * (3.0 * v.x).sin() + 0.45)
            .collect();
        let (d, clamped) = mesh.deform(&offsets, 0.5).unwrap();
        let expected_clamped = offsets.iter().filter(|l| l.abs() > 0.5).count();
        assert_eq!(clamped, expected_clamped);
        assert!(expected_clamped > 0, "test should exercise the clamp");
        for i in 0..mesh.vertices().len() {
            let l = offsets[i].clamp(-0.5, 0.5);
            let want = mesh.vertices()[i] + mesh.vertex_normals()[i] * l;
            assert!((d.vertices()[i] - want).length() < 1e-15);
        }
    }

    #[test]
    fn deform_rejects_length_mismatch() {
        let mesh = templates::sphere(2, 1.0).unwrap();
        assert!(matches!(
            mesh.deform(&[0.0; 3], 0.5),
            Err(GeometryError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn first_hit_sphere_analytic() {
        let mesh = templates::sphere(5, 1.0).unwrap();
        let offsets = vec![0.0; mesh.vertices().len()];
        let (d, _) = mesh.deform(&offsets, 0.5).unwrap();
        let origin = vec3(0.0, 0.0, 3.0);
        let ray = Ray {
            origin,
            dir: vec3(0.0, 0.0, -1.0),
        };
        let hit = d.first_hit(&ray).expect("ray hits sphere");
        // Faceted sphere: the chord sits slightly inside the true sphere.
        assert!((hit.t - 2.0).abs() < 5e-3);

        let miss = Ray {
            origin,
            dir: vec3(1.0, 0.0, 0.0),
        };
        assert!(d.first_hit(&miss).is_none());
    }

    #[test]
    fn first_hit_lies_on_triangle_plane() {
        let mesh = templates::sphere(3, 1.0).unwrap();
        let offsets = vec![0.0; mesh.vertices().len()];
        let (d, _) = mesh.deform(&offsets, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let origin = vec3(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(2.0..4.0),
            );
            let target = vec3(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            let ray = Ray {
                origin,
                dir: (target - origin).normalized(),
            };
            if let Some(hit) = d.first_hit(&ray) {
                let f = d.faces()[hit.face as usize];
                let a = d.vertices()[f[0] as usize];
                let b = d.vertices()[f[1] as usize];
                let c = d.vertices()[f[2] as usize];
                let n = (b - a).cross(c - a).normalized();
                let p = ray.at(hit.t);
                assert!(n.dot(p - a).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn closedness_check_distinguishes() {
        assert!(templates::sphere(2, 1.0).unwrap().is_closed());
        assert!(!plane_mesh().is_closed());
    }

    #[test]
    fn face_metric_identity_plane() {
        let mesh = plane_mesh();
        let m = mesh.face_metric(0);
        assert!(!m.degenerate);
        let g = m.world_gradient([0.7, -0.2]);
        assert!((g[0] - 0.7).abs() < 1e-12);
        assert!((g[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn face_metric_scaled_plane() {
        // Positions stretch u by 2: worldspace slope halves.
        let vertices = vec![
            vec3(0.0, 0.0, 0.0),
            vec3(2.0, 0.0, 0.0),
            vec3(2.0, 1.0, 0.0),
            vec3(0.0, 1.0, 0.0),
        ];
        let faces = vec![[0, 1, 2], [0, 2, 3]];
        let face_texels = vec![
            [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
            [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        ];
        let normals = vec![vec3(0.0, 0.0, 1.0); 4];
        let mesh = TemplateMesh::new(vertices, faces, face_texels, normals).unwrap();
        let g = mesh.face_metric(0).world_gradient([1.0, 0.0]);
        let slope = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((slope - 0.5).abs() < 1e-12, "slope {slope}");
        let g = mesh.face_metric(0).world_gradient([0.0, 1.0]);
        let slope = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((slope - 1.0).abs() < 1e-12, "slope {slope}");
    }
}
