//! Minimal reverse-mode autodiff over small dense row-major matrices.
//!
//! The tape records whole-matrix operations (a full MLP layer over a batch of
//! ray samples is one matmul node), so per-node bookkeeping stays negligible
//! next to the arithmetic. Node values live in one bump arena that is reused
//! across tapes via [`Tape::clear`]. Creation order is the topological order:
//! an op's parents always precede it, and [`Tape::backward`] walks nodes in
//! reverse, accumulating adjoints additively.
//!
//! Shapes are validated with assertions: a mismatch is a bug in the calling
//! renderer, not a recoverable input error.

use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use crate::math::FloatMath;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    /// a[m,k] * b[k,n]
    MatMul { a: u32, b: u32 },
    /// a[k,m]^T * b[k,n]
    MatMulTn { a: u32, b: u32 },
    Add { a: u32, b: u32 },
    Sub { a: u32, b: u32 },
    /// Elementwise; `b` may be 1x1 (scalar broadcast).
    Mul { a: u32, b: u32 },
    /// Elementwise; `b` may be 1x1 (scalar broadcast).
    Div { a: u32, b: u32 },
    /// a[m,n] + bias[1,n] broadcast over rows.
    AddRow { a: u32, bias: u32 },
    Scale { a: u32, c: f64 },
    AddConst { a: u32 },
    Exp { a: u32 },
    Sqrt { a: u32 },
    Recip { a: u32 },
    Tanh { a: u32 },
    Sigmoid { a: u32 },
    Clamp { a: u32, lo: f64, hi: f64 },
    Sum { a: u32 },
    /// y[k] = sum of x[0..k] (column vector).
    CumsumExclusive { a: u32 },
}

struct Node {
    op: Op,
    rows: u32,
    cols: u32,
    off: usize,
    needs_grad: bool,
}

impl Node {
    fn len(&self) -> usize {
        (self.rows * self.cols) as usize
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    vals: Vec<f64>,
    adj: Vec<f64>,
    done: bool,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// Reset for a fresh computation, keeping allocated capacity.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.vals.clear();
        self.done = false;
    }

    pub fn rows(&self, v: Var) -> usize {
        self.nodes[v.0 as usize].rows as usize
    }

    pub fn cols(&self, v: Var) -> usize {
        self.nodes[v.0 as usize].cols as usize
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.0 as usize];
        &self.vals[n.off..n.off + n.len()]
    }

    /// Gradient of the last `backward` loss w.r.t. `v`; None for nodes the
    /// loss does not depend on differentiably.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        let n = &self.nodes[v.0 as usize];
        if !self.done || !n.needs_grad {
            return None;
        }
        Some(&self.adj[n.off..n.off + n.len()])
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, needs_grad: bool) -> (Var, usize) {
        assert!(!self.done, "tape already differentiated; clear() first");
        let off = self.vals.len();
        self.vals.resize(off + rows * cols, 0.0);
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            op,
            rows: rows as u32,
            cols: cols as u32,
            off,
            needs_grad,
        });
        (Var(id), off)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0 as usize].needs_grad
    }

    /// Constant input (no gradient).
    pub fn leaf(&mut self, rows: usize, cols: usize, data: &[f64]) -> Var {
        assert_eq!(data.len(), rows * cols);
        let (v, off) = self.push(Op::Leaf, rows, cols, false);
        self.vals[off..off + data.len()].copy_from_slice(data);
        v
    }

    /// Differentiable input (parameter).
    pub fn param(&mut self, rows: usize, cols: usize, data: &[f64]) -> Var {
        assert_eq!(data.len(), rows * cols);
        let (v, off) = self.push(Op::Leaf, rows, cols, true);
        self.vals[off..off + data.len()].copy_from_slice(data);
        v
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.leaf(1, 1, &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = (self.rows(a), self.cols(a));
        let (k2, n) = (self.rows(b), self.cols(b));
        assert_eq!(k, k2, "matmul inner dims");
        let ng = self.needs(a) || self.needs(b);
        let (v, off) = self.push(Op::MatMul { a: a.0, b: b.0 }, m, n, ng);
        let (av, bv) = (self.node_range(a.0), self.node_range(b.0));
        let (vals, out) = split_out(&mut self.vals, off, m * n);
        matmul_acc(&vals[av.0..av.1], m, k, &vals[bv.0..bv.1], n, out);
        v
    }

    /// a^T * b where a is [k,m] and b is [k,n].
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let (k, m) = (self.rows(a), self.cols(a));
        let (k2, n) = (self.rows(b), self.cols(b));
        assert_eq!(k, k2, "matmul_tn inner dims");
        let ng = self.needs(a) || self.needs(b);
        let (v, off) = self.push(Op::MatMulTn { a: a.0, b: b.0 }, m, n, ng);
        let (av, bv) = (self.node_range(a.0), self.node_range(b.0));
        let (vals, out) = split_out(&mut self.vals, off, m * n);
        matmul_tn_acc(&vals[av.0..av.1], k, m, &vals[bv.0..bv.1], n, out);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add { a: a.0, b: b.0 }, |x, y| x + y, false)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub { a: a.0, b: b.0 }, |x, y| x - y, false)
    }

    /// Elementwise product; `b` may be 1x1 for scalar broadcast.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul { a: a.0, b: b.0 }, |x, y| x * y, true)
    }

    /// Elementwise quotient; `b` may be 1x1 for scalar broadcast.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Div { a: a.0, b: b.0 }, |x, y| x / y, true)
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
        broadcast: bool,
    ) -> Var {
        let (m, n) = (self.rows(a), self.cols(a));
        let scalar_b = broadcast && self.rows(b) == 1 && self.cols(b) == 1;
        if !scalar_b {
            assert_eq!((m, n), (self.rows(b), self.cols(b)), "elementwise shapes");
        }
        let ng = self.needs(a) || self.needs(b);
        let (v, off) = self.push(op, m, n, ng);
        let (ar, br) = (self.node_range(a.0), self.node_range(b.0));
        let (vals, out) = split_out(&mut self.vals, off, m * n);
        if scalar_b && (m, n) != (1, 1) {
            let s = vals[br.0];
            for (o, &x) in out.iter_mut().zip(&vals[ar.0..ar.1]) {
                *o = f(x, s);
            }
        } else {
            for ((o, &x), &y) in out.iter_mut().zip(&vals[ar.0..ar.1]).zip(&vals[br.0..br.1]) {
                *o = f(x, y);
            }
        }
        v
    }

    /// a[m,n] + row bias[1,n].
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (m, n) = (self.rows(a), self.cols(a));
        assert_eq!((self.rows(bias), self.cols(bias)), (1, n), "bias shape");
        let ng = self.needs(a) || self.needs(bias);
        let (v, off) = self.push(Op::AddRow { a: a.0, bias: bias.0 }, m, n, ng);
        let (ar, br) = (self.node_range(a.0), self.node_range(bias.0));
        let (vals, out) = split_out(&mut self.vals, off, m * n);
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = vals[ar.0 + i * n + j] + vals[br.0 + j];
            }
        }
        v
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale { a: a.0, c }, |x| x * c)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::AddConst { a: a.0 }, |x| x + c)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp { a: a.0 }, FloatMath::exp)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, Op::Sqrt { a: a.0 }, FloatMath::sqrt)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.map(a, Op::Recip { a: a.0 }, |x| 1.0 / x)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh { a: a.0 }, FloatMath::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid { a: a.0 }, sigmoid)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp { a: a.0, lo, hi }, |x| x.clamp(lo, hi))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (m, n) = (self.rows(a), self.cols(a));
        let ng = self.needs(a);
        let (v, off) = self.push(op, m, n, ng);
        let ar = self.node_range(a.0);
        let (vals, out) = split_out(&mut self.vals, off, m * n);
        for (o, &x) in out.iter_mut().zip(&vals[ar.0..ar.1]) {
            *o = f(x);
        }
        v
    }

    /// Sum of all entries, as 1x1.
    pub fn sum(&mut self, a: Var) -> Var {
        let ng = self.needs(a);
        let (v, off) = self.push(Op::Sum { a: a.0 }, 1, 1, ng);
        let ar = self.node_range(a.0);
        let (vals, out) = split_out(&mut self.vals, off, 1);
        out[0] = vals[ar.0..ar.1].iter().sum();
        v
    }

    /// Exclusive prefix sum over a column vector: y_k = sum of x_0..x_{k-1}.
    pub fn cumsum_exclusive(&mut self, a: Var) -> Var {
        let m = self.rows(a);
        assert_eq!(self.cols(a), 1, "cumsum expects a column");
        let ng = self.needs(a);
        let (v, off) = self.push(Op::CumsumExclusive { a: a.0 }, m, 1, ng);
        let ar = self.node_range(a.0);
        let (vals, out) = split_out(&mut self.vals, off, m);
        let mut acc = 0.0;
        for (o, &x) in out.iter_mut().zip(&vals[ar.0..ar.1]) {
            *o = acc;
            acc += x;
        }
        v
    }

    fn node_range(&self, id: u32) -> (usize, usize) {
        let n = &self.nodes[id as usize];
        (n.off, n.off + n.len())
    }

    /// Reverse pass from a scalar loss. Adjoints accumulate additively;
    /// parameters created with [`Tape::param`] expose theirs via
    /// [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) {
        let ln = &self.nodes[loss.0 as usize];
        assert_eq!((ln.rows, ln.cols), (1, 1), "loss must be scalar");
        assert!(ln.needs_grad, "loss does not depend on any parameter");
        self.adj.clear();
        self.adj.resize(self.vals.len(), 0.0);
        self.adj[ln.off] = 1.0;
        self.done = true;

        for id in (0..=loss.0 as usize).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let (off, len) = (self.nodes[id].off, self.nodes[id].len());
            let (rows, cols) = (self.nodes[id].rows as usize, self.nodes[id].cols as usize);
            let op = self.nodes[id].op;
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (ar, br) = (self.node_range(a), self.node_range(b));
                    let (m, k) = (rows, self.nodes[a as usize].cols as usize);
                    let n = cols;
                    if self.needs_id(a) {
                        // dA += dC * B^T
                        let (dc, da) = adj_pair(&mut self.adj, off, len, ar.0, ar.1 - ar.0);
                        matmul_nt_acc(dc, m, n, &self.vals[br.0..br.1], k, da);
                    }
                    if self.needs_id(b) {
                        // dB += A^T * dC
                        let (dc, db) = adj_pair(&mut self.adj, off, len, br.0, br.1 - br.0);
                        matmul_tn_acc(&self.vals[ar.0..ar.1], m, k, dc, n, db);
                    }
                }
                Op::MatMulTn { a, b } => {
                    let (ar, br) = (self.node_range(a), self.node_range(b));
                    let k = self.nodes[a as usize].rows as usize;
                    let (m, n) = (rows, cols);
                    if self.needs_id(a) {
                        // dA += B * dC^T  (A is [k,m]); dA[r,i] += sum_j B[r,j] dC[i,j]
                        let (dc, da) = adj_pair(&mut self.adj, off, len, ar.0, ar.1 - ar.0);
                        matmul_nt_acc(&self.vals[br.0..br.1], k, n, dc, m, da);
                    }
                    if self.needs_id(b) {
                        // dB += A * dC  (A is [k,m], dC is [m,n])
                        let (dc, db) = adj_pair(&mut self.adj, off, len, br.0, br.1 - br.0);
                        matmul_acc(&self.vals[ar.0..ar.1], k, m, dc, n, db);
                    }
                }
                Op::Add { a, b } => {
                    self.acc_into(a, off, len, |dy, _i| dy);
                    self.acc_into(b, off, len, |dy, _i| dy);
                }
                Op::Sub { a, b } => {
                    self.acc_into(a, off, len, |dy, _i| dy);
                    self.acc_into(b, off, len, |dy, _i| -dy);
                }
                Op::Mul { a, b } => {
                    let (ar, br) = (self.node_range(a), self.node_range(b));
                    let scalar_b = br.1 - br.0 == 1 && len != 1;
                    if self.needs_id(a) {
                        if scalar_b {
                            let s = self.vals[br.0];
                            self.acc_into(a, off, len, |dy, _i| dy * s);
                        } else {
                            let bv = br.0;
                            let vals = &self.vals;
                            let (dc, da) = adj_pair(&mut self.adj, off, len, ar.0, ar.1 - ar.0);
                            for i in 0..len {
                                da[i] += dc[i] * vals[bv + i];
                            }
                        }
                    }
                    if self.needs_id(b) {
                        if scalar_b {
                            let mut s = 0.0;
                            for i in 0..len {
                                s += self.adj[off + i] * self.vals[ar.0 + i];
                            }
                            self.adj[br.0] += s;
                        } else {
                            let av = ar.0;
                            let vals = &self.vals;
                            let (dc, db) = adj_pair(&mut self.adj, off, len, br.0, br.1 - br.0);
                            for i in 0..len {
                                db[i] += dc[i] * vals[av + i];
                            }
                        }
                    }
                }
                Op::Div { a, b } => {
                    let (ar, br) = (self.node_range(a), self.node_range(b));
                    let scalar_b = br.1 - br.0 == 1 && len != 1;
                    if self.needs_id(a) {
                        if scalar_b {
                            let s = 1.0 / self.vals[br.0];
                            self.acc_into(a, off, len, |dy, _i| dy * s);
                        } else {
                            let bv = br.0;
                            let vals = &self.vals;
                            let (dc, da) = adj_pair(&mut self.adj, off, len, ar.0, ar.1 - ar.0);
                            for i in 0..len {
                                da[i] += dc[i] / vals[bv + i];
                            }
                        }
                    }
                    if self.needs_id(b) {
                        if scalar_b {
                            let inv_b = 1.0 / self.vals[br.0];
                            let mut s = 0.0;
                            for i in 0..len {
                                s += self.adj[off + i] * self.vals[off + i];
                            }
                            self.adj[br.0] -= s * inv_b;
                        } else {
                            let vals = &self.vals;
                            let (dc, db) = adj_pair(&mut self.adj, off, len, br.0, br.1 - br.0);
                            for i in 0..len {
                                db[i] -= dc[i] * vals[off + i] / vals[br.0 + i];
                            }
                        }
                    }
                }
                Op::AddRow { a, bias } => {
                    self.acc_into(a, off, len, |dy, _i| dy);
                    if self.needs_id(bias) {
                        let br = self.node_range(bias);
                        for i in 0..rows {
                            for j in 0..cols {
                                self.adj[br.0 + j] += self.adj[off + i * cols + j];
                            }
                        }
                    }
                }
                Op::Scale { a, c } => self.acc_into(a, off, len, |dy, _i| dy * c),
                Op::AddConst { a } => self.acc_into(a, off, len, |dy, _i| dy),
                Op::Exp { a } => {
                    let vals_off = off;
                    let vals = &self.vals;
                    let ar = self.node_range(a);
                    if self.needs_id(a) {
                        let (dc, da) = adj_pair(&mut self.adj, off, len, ar.0, ar.1 - ar.0);
                        for i in 0..len {
                            da[i] += dc[i] * vals[vals_off + i];
                        }
                    }
                }
                Op::Sqrt { a } => {
                    let vals = &self.vals;
                    let ar = self.node_range(a);
                    if self.needs_id(a) {
                        let (dc, da) = adj_pair(&mut self.adj, off, len, ar.0, ar.1 - ar.0);
                        for i in 0..len {
                            da[i] += dc[i] * 0.5 / vals[off + i];
                        }
                    }
                }
                Op::Recip { a } => {
                    let vals = &self.vals;
                    let ar = self.node_range(a);
                    if self.needs_id(a) {
                        let (dc, da) = adj_pair(&mut self.adj, off, len, ar.0, ar.1 - ar.0);
                        for i in 0..len {
                            let y = vals[off + i];
                            da[i] -= dc[i] * y * y;
                        }
                    }
                }
                Op::Tanh { a } => {
                    let vals = &self.vals;
                    let ar = self.node_range(a);
                    if self.needs_id(a) {
                        let (dc, da) = adj_pair(&mut self.adj, off, len, ar.0, ar.1 - ar.0);
                        for i in 0..len {
                            let y = vals[off + i];
                            da[i] += dc[i] * (1.0 - y * y);
                        }
                    }
                }
                Op::Sigmoid { a } => {
                    let vals = &self.vals;
                    let ar = self.node_range(a);
                    if self.needs_id(a) {
                        let (dc, da) = adj_pair(&mut self.adj, off, len, ar.0, ar.1 - ar.0);
                        for i in 0..len {
                            let y = vals[off + i];
                            da[i] += dc[i] * y * (1.0 - y);
                        }
                    }
                }
                Op::Clamp { a, lo, hi } => {
                    let ar = self.node_range(a);
                    let vals = &self.vals;
                    if self.needs_id(a) {
                        let (dc, da) = adj_pair(&mut self.adj, off, len, ar.0, ar.1 - ar.0);
                        for i in 0..len {
                            let x = vals[ar.0 + i];
                            if x >= lo && x <= hi {
                                da[i] += dc[i];
                            }
                        }
                    }
                }
                Op::Sum { a } => {
                    let dy = self.adj[off];
                    if self.needs_id(a) {
                        let ar = self.node_range(a);
                        for x in &mut self.adj[ar.0..ar.1] {
                            *x += dy;
                        }
                    }
                }
                Op::CumsumExclusive { a } => {
                    if self.needs_id(a) {
                        let ar = self.node_range(a);
                        // dx_m = sum of dy_k for k > m: reverse suffix sum.
                        let mut acc = 0.0;
                        for i in (0..len).rev() {
                            acc += self.adj[off + i];
                            self.adj[ar.0 + i] += acc - self.adj[off + i];
                        }
                    }
                }
            }
        }
    }

    fn needs_id(&self, id: u32) -> bool {
        self.nodes[id as usize].needs_grad
    }

    fn acc_into(&mut self, target: u32, off: usize, len: usize, f: impl Fn(f64, usize) -> f64) {
        if !self.needs_id(target) {
            return;
        }
        let tr = self.node_range(target);
        if tr.0 == off {
            return;
        }
        let (dc, dt) = adj_pair(&mut self.adj, off, len, tr.0, tr.1 - tr.0);
        for i in 0..len.min(dt.len()) {
            dt[i] += f(dc[i], i);
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Split the value arena into (everything, freshly pushed output) without
/// aliasing; the output region is always the arena tail.
fn split_out(vals: &mut [f64], off: usize, len: usize) -> (&[f64], &mut [f64]) {
    let (head, tail) = vals.split_at_mut(off);
    (head, &mut tail[..len])
}

/// Disjoint (source adjoint, destination adjoint) slices.
fn adj_pair(adj: &mut [f64], src_off: usize, src_len: usize, dst_off: usize, dst_len: usize) -> (&[f64], &mut [f64]) {
    debug_assert!(src_off >= dst_off + dst_len, "adjoint regions must be disjoint");
    let (head, tail) = adj.split_at_mut(src_off);
    (&tail[..src_len], &mut head[dst_off..dst_off + dst_len])
}

/// out += a[m,k] * b[k,n], row-major. The i-k-j loop keeps the inner loop
/// contiguous in both `b` and `out` so it vectorizes.
pub fn matmul_acc(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// out[m,k] += a[m,n] * b[k,n]^T.
pub fn matmul_nt_acc(a: &[f64], m: usize, n: usize, b: &[f64], k: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (kk, o) in orow.iter_mut().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut s = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            *o += s;
        }
    }
}

/// out[k,n] += a[m,k]^T * b[m,n].
pub fn matmul_tn_acc(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}
