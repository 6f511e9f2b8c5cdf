//! Axis-aligned BVH over a triangle soup: nearest-point and ray queries.
//!
//! The tree stores triangle indices only; callers pass the triangle positions
//! to every query so one tree layout can serve both template and deformed
//! vertex sets that share topology.

use alloc::vec::Vec;

use crate::math::{vec3, Vec3};

#[derive(Debug, Clone, Copy)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: vec3(f64::INFINITY, f64::INFINITY, f64::INFINITY),
        max: vec3(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
    };

    pub fn grow_point(&mut self, p: Vec3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    pub fn grow_triangle(&mut self, tri: &[Vec3; 3]) {
        self.grow_point(tri[0]);
        self.grow_point(tri[1]);
        self.grow_point(tri[2]);
    }

    pub fn centroid(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Squared distance from `p` to the box (0 inside).
    #[inline]
    pub fn dist_sq(&self, p: Vec3) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        let dz = (self.min.z - p.z).max(0.0).max(p.z - self.max.z);
        dx * dx + dy * dy + dz * dz
    }

    /// Slab test; returns the entry depth if the ray touches the box within
    /// `[t_min, t_max]`. Zero direction components produce 0*inf = NaN for
    /// boundary-aligned origins; the comparisons below treat NaN slabs as
    /// unconstrained, which can only over-include.
    #[inline]
    pub fn ray_entry(&self, origin: Vec3, inv_dir: Vec3, t_min: f64, t_max: f64) -> Option<f64> {
        let mut lo = t_min;
        let mut hi = t_max;
        for a in 0..3 {
            let inv = inv_dir.axis(a);
            let t0 = (self.min.axis(a) - origin.axis(a)) * inv;
            let t1 = (self.max.axis(a) - origin.axis(a)) * inv;
            let (near, far) = if inv < 0.0 { (t1, t0) } else { (t0, t1) };
            if near > lo {
                lo = near;
            }
            if far < hi {
                hi = far;
            }
            if hi < lo {
                return None;
            }
        }
        Some(lo)
    }
}

#[derive(Debug, Clone)]
struct Node {
    aabb: Aabb,
    /// Leaf: first index into `order`. Internal: index of the left child
    /// (right child is `left_first + 1`).
    left_first: u32,
    /// Number of triangles in a leaf; 0 marks an internal node.
    count: u32,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

/// Result of a nearest-point query.
#[derive(Debug, Clone, Copy)]
pub struct ClosestHit {
    pub face: u32,
    pub point: Vec3,
    pub bary: [f64; 3],
    pub dist_sq: f64,
}

/// Result of a ray query.
#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    pub face: u32,
    pub t: f64,
    pub bary: [f64; 3],
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(tris: &[[Vec3; 3]]) -> Bvh {
        let n = tris.len();
        let order: Vec<u32> = (0..n as u32).collect();
        let centroids: Vec<Vec3> = tris
            .iter()
            .map(|t| (t[0] + t[1] + t[2]) * (1.0 / 3.0))
            .collect();
        let mut nodes = Vec::with_capacity(2 * n.max(1));
        nodes.push(Node {
            aabb: Aabb::EMPTY,
            left_first: 0,
            count: n as u32,
        });
        let mut bvh = Bvh { nodes, order };
        if n > 0 {
            bvh.split(0, 0, n, tris, &centroids);
        }
        bvh
    }

    fn split(&mut self, node: usize, first: usize, count: usize, tris: &[[Vec3; 3]], centroids: &[Vec3]) {
        let mut aabb = Aabb::EMPTY;
        for &t in &self.order[first..first + count] {
            aabb.grow_triangle(&tris[t as usize]);
        }
        self.nodes[node].aabb = aabb;
        if count <= LEAF_SIZE {
            self.nodes[node].left_first = first as u32;
            self.nodes[node].count = count as u32;
            return;
        }

        // Median split along the widest centroid axis.
        let mut cb = Aabb::EMPTY;
        for &t in &self.order[first..first + count] {
            cb.grow_point(centroids[t as usize]);
        }
        let ext = cb.max - cb.min;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let slice = &mut self.order[first..first + count];
        let mid = count / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            let ca = centroids[a as usize].axis(axis);
            let cb = centroids[b as usize].axis(axis);
            ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
        });

        let left = self.nodes.len();
        self.nodes.push(Node {
            aabb: Aabb::EMPTY,
            left_first: 0,
            count: 0,
        });
        self.nodes.push(Node {
            aabb: Aabb::EMPTY,
            left_first: 0,
            count: 0,
        });
        self.nodes[node].left_first = left as u32;
        self.nodes[node].count = 0;
        self.split(left, first, mid, tris, centroids);
        self.split(left + 1, first + mid, count - mid, tris, centroids);
    }

    /// Nearest point on the triangle set. `init` seeds the search (typically
    /// the previous query's face for coherent sample sequences); `degenerate`
    /// flags faces to skip, or is empty.
    pub fn closest_point(
        &self,
        tris: &[[Vec3; 3]],
        degenerate: &[bool],
        p: Vec3,
        init: Option<u32>,
    ) -> Option<ClosestHit> {
        let mut best: Option<ClosestHit> = None;
        if let Some(f) = init {
            let fi = f as usize;
            if fi < tris.len() && !degenerate.get(fi).copied().unwrap_or(false) {
                let (point, bary) = closest_point_triangle(p, &tris[fi]);
                best = Some(ClosestHit {
                    face: f,
                    point,
                    bary,
                    dist_sq: (p - point).length_sq(),
                });
            }
        }
        if self.nodes.is_empty() || self.order.is_empty() {
            return best;
        }

        let mut stack: [u32; 64] = [0; 64];
        let mut sp = 0usize;
        stack[sp] = 0;
        sp += 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if let Some(b) = &best {
                if node.aabb.dist_sq(p) > b.dist_sq {
                    continue;
                }
            }
            if node.count > 0 {
                for &t in &self.order[node.left_first as usize..(node.left_first + node.count) as usize] {
                    let fi = t as usize;
                    if degenerate.get(fi).copied().unwrap_or(false) {
                        continue;
                    }
                    let (point, bary) = closest_point_triangle(p, &tris[fi]);
                    let dist_sq = (p - point).length_sq();
                    let better = match &best {
                        None => true,
                        // Ties break to the lowest face index so projection
                        // is deterministic on shared edges and seams.
                        Some(b) => dist_sq < b.dist_sq || (dist_sq == b.dist_sq && t < b.face),
                    };
                    if better {
                        best = Some(ClosestHit {
                            face: t,
                            point,
                            bary,
                            dist_sq,
                        });
                    }
                }
            } else {
                let l = node.left_first as usize;
                let dl = self.nodes[l].aabb.dist_sq(p);
                let dr = self.nodes[l + 1].aabb.dist_sq(p);
                // Push the farther child first so the nearer is visited next.
                let (near, far) = if dl <= dr { (l, l + 1) } else { (l + 1, l) };
                stack[sp] = far as u32;
                sp += 1;
                stack[sp] = near as u32;
                sp += 1;
            }
        }
        best
    }

    /// First intersection with `t in [t_min, t_max]`; smallest t wins, ties
    /// break to the lowest face index.
    pub fn first_hit(
        &self,
        tris: &[[Vec3; 3]],
        origin: Vec3,
        dir: Vec3,
        t_min: f64,
        t_max: f64,
    ) -> Option<RayHit> {
        if self.nodes.is_empty() || self.order.is_empty() {
            return None;
        }
        let inv_dir = vec3(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<RayHit> = None;
        let mut stack: [u32; 64] = [0; 64];
        let mut sp = 0usize;
        stack[sp] = 0;
        sp += 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            let limit = best.map_or(t_max, |b| b.t);
            if node.aabb.ray_entry(origin, inv_dir, t_min, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.left_first as usize..(node.left_first + node.count) as usize] {
                    if let Some((tt, bary)) = ray_triangle(origin, dir, &tris[t as usize], t_min, limit)
                    {
                        let better = match &best {
                            None => true,
                            Some(b) => tt < b.t || (tt == b.t && t < b.face),
                        };
                        if better {
                            best = Some(RayHit { face: t, t: tt, bary });
                        }
                    }
                }
            } else {
                let l = node.left_first as usize;
                let el = self.nodes[l].aabb.ray_entry(origin, inv_dir, t_min, limit);
                let er = self.nodes[l + 1].aabb.ray_entry(origin, inv_dir, t_min, limit);
                match (el, er) {
                    (Some(a), Some(b)) => {
                        let (near, far) = if a <= b { (l, l + 1) } else { (l + 1, l) };
                        stack[sp] = far as u32;
                        sp += 1;
                        stack[sp] = near as u32;
                        sp += 1;
                    }
                    (Some(_), None) => {
                        stack[sp] = l as u32;
                        sp += 1;
                    }
                    (None, Some(_)) => {
                        stack[sp] = (l + 1) as u32;
                        sp += 1;
                    }
                    (None, None) => {}
                }
            }
        }
        best
    }
}

/// Closest point on a triangle (Ericson, Real-Time Collision Detection §5.1.5)
/// with the barycentric coordinates of the result.
pub fn closest_point_triangle(p: Vec3, tri: &[Vec3; 3]) -> (Vec3, [f64; 3]) {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }

    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }

    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }

    let denom = va + vb + vc;
    if denom <= 0.0 {
        // Degenerate triangle; fall back to the nearest vertex.
        let da = (p - a).length_sq();
        let db = (p - b).length_sq();
        let dc = (p - c).length_sq();
        return if da <= db && da <= dc {
            (a, [1.0, 0.0, 0.0])
        } else if db <= dc {
            (b, [0.0, 1.0, 0.0])
        } else {
            (c, [0.0, 0.0, 1.0])
        };
    }
    let inv = 1.0 / denom;
    let v = vb * inv;
    let w = vc * inv;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Moller-Trumbore intersection; returns (t, barycentrics) for hits with
/// `t_min <= t <= t_max`.
#[inline]
pub fn ray_triangle(
    origin: Vec3,
    dir: Vec3,
    tri: &[Vec3; 3],
    t_min: f64,
    t_max: f64,
) -> Option<(f64, [f64; 3])> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = dir.cross(e2);
    let det = e1.dot(pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - tri[0];
    let u = tvec.dot(pvec) * inv_det;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = dir.dot(qvec) * inv_det;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(qvec) * inv_det;
    if t < t_min || t > t_max {
        return None;
    }
    let u = u.clamp(0.0, 1.0);
    let v = v.clamp(0.0, 1.0 - u);
    Some((t, [1.0 - u - v, u, v]))
}
