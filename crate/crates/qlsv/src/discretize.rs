//! Grids, finite-difference stencils and the split operator
//! `L = L11 + L12 + L22` on a tensor grid.
//!
//! One-dimensional operators have the form `1/2 a f'' + b f' - c f`. Interior
//! rows are three-point; endogenous boundary rows apply the PDE itself with
//! one-sided stencils and reach four nodes deep. Dirichlet rows are zero in
//! `L` (the value does not move), which makes them unit rows of any
//! `I - s L`.

use crate::error::{invalid, QlsvError, Result};
use crate::model::{BoundaryKind, QlsvModel, TransformedProblem};
use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid1D {
    pub nodes: Vec<f64>,
}

impl Grid1D {
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 5 {
            return Err(QlsvError::Grid(format!("need at least 5 nodes, got {}", nodes.len())));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(QlsvError::Grid("nodes must be strictly increasing".into()));
        }
        Ok(Grid1D { nodes })
    }

    /// `intervals + 1` equally spaced nodes on `[a, b]`.
    pub fn uniform(a: f64, b: f64, intervals: usize) -> Result<Self> {
        if !(b > a) {
            return invalid("empty interval");
        }
        let h = (b - a) / intervals as f64;
        let mut nodes: Vec<f64> = (0..=intervals).map(|i| a + h * i as f64).collect();
        *nodes.last_mut().unwrap() = b;
        Grid1D::from_nodes(nodes)
    }

    /// Nodes uniform in `sqrt(x)` on `[0, max]`: dense near zero variance.
    pub fn sqrt_uniform(max: f64, intervals: usize) -> Result<Self> {
        if !(max > 0.0) {
            return invalid("variance grid needs a positive upper end");
        }
        let r = max.sqrt();
        let mut nodes: Vec<f64> = (0..=intervals).map(|j| (r * j as f64 / intervals as f64).powi(2)).collect();
        *nodes.last_mut().unwrap() = max;
        Grid1D::from_nodes(nodes)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    pub x1: Grid1D,
    pub x2: Grid1D,
}

impl Grid2D {
    pub fn new(x1: Grid1D, x2: Grid1D) -> Self {
        Grid2D { x1, x2 }
    }
    pub fn n1(&self) -> usize {
        self.x1.len()
    }
    pub fn n2(&self) -> usize {
        self.x2.len()
    }
    pub fn size(&self) -> usize {
        self.n1() * self.n2()
    }
    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i1 * self.n2() + i2
    }
}

/// Central first-derivative weights at interior node `i` (offsets -1, 0, +1).
pub fn xi_central(x: &[f64], i: usize) -> [f64; 3] {
    let hm = x[i] - x[i - 1];
    let hp = x[i + 1] - x[i];
    let h = hm + hp;
    [-hp / (hm * h), (hp - hm) / (hm * hp), hm / (hp * h)]
}

/// Central weights encoding `f''/2` at interior node `i`.
pub fn eta_central(x: &[f64], i: usize) -> [f64; 3] {
    let hm = x[i] - x[i - 1];
    let hp = x[i + 1] - x[i];
    let h = hm + hp;
    [1.0 / (hm * h), -1.0 / (hm * hp), 1.0 / (hp * h)]
}

fn first_one_sided(d1: f64, d2: f64) -> [f64; 3] {
    let d21 = d2 - d1;
    [-(d1 + d2) / (d1 * d2), d2 / (d1 * d21), -d1 / (d21 * d2)]
}

fn second_one_sided(d1: f64, d2: f64, d3: f64) -> [f64; 4] {
    let (d21, d31, d32) = (d2 - d1, d3 - d1, d3 - d2);
    let k1 = (d2 + d3) / (d1 * d21 * d31);
    let k2 = -(d1 + d3) / (d2 * d21 * d32);
    let k3 = (d1 + d2) / (d3 * d31 * d32);
    // these weights give f''/2; double them for the full second derivative
    [2.0 * (k1 + k2 + k3), -2.0 * k1, -2.0 * k2, -2.0 * k3]
}

/// Forward first derivative at node 0 (nodes 0, 1, 2).
pub fn xi_forward(x: &[f64]) -> [f64; 3] {
    first_one_sided(x[1] - x[0], x[2] - x[0])
}

/// Backward first derivative at the last node (nodes I-2, I-1, I).
pub fn xi_backward(x: &[f64]) -> [f64; 3] {
    let n = x.len() - 1;
    let w = first_one_sided(x[n] - x[n - 1], x[n] - x[n - 2]);
    [-w[2], -w[1], -w[0]]
}

/// Full second derivative at node 0 from nodes 0..3.
pub fn eta_forward(x: &[f64]) -> [f64; 4] {
    second_one_sided(x[1] - x[0], x[2] - x[0], x[3] - x[0])
}

/// Full second derivative at the last node from nodes I-3..I.
pub fn eta_backward(x: &[f64]) -> [f64; 4] {
    let n = x.len() - 1;
    let w = second_one_sided(x[n] - x[n - 1], x[n] - x[n - 2], x[n] - x[n - 3]);
    [w[3], w[2], w[1], w[0]]
}

/// A batch of `m` one-dimensional operators of length `n` acting along one
/// axis of a flattened field. Node `(i, l)` lives at `i * stride_i + l * stride_l`.
#[derive(Clone, Debug)]
pub struct LineOps {
    pub n: usize,
    pub m: usize,
    pub stride_i: usize,
    pub stride_l: usize,
    pub lo: Vec<f64>,
    pub di: Vec<f64>,
    pub up: Vec<f64>,
    /// row 0 entries at columns 2 and 3
    pub head: Vec<[f64; 2]>,
    /// row n-1 entries at columns n-3 and n-4
    pub tail: Vec<[f64; 2]>,
}

impl LineOps {
    pub fn zeros(n: usize, m: usize, stride_i: usize, stride_l: usize) -> Self {
        let len = n * m;
        LineOps {
            n,
            m,
            stride_i,
            stride_l,
            lo: vec![0.0; len],
            di: vec![0.0; len],
            up: vec![0.0; len],
            head: vec![[0.0; 2]; m],
            tail: vec![[0.0; 2]; m],
        }
    }

    #[inline]
    fn k(&self, i: usize, l: usize) -> usize {
        i * self.stride_i + l * self.stride_l
    }

    /// Write `L u` (times `scale`) into `out`, adding when `accumulate`.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64], scale: f64, accumulate: bool) {
        let (n, si) = (self.n, self.stride_i);
        let interior = |k: usize| self.lo[k] * u[k - si] + self.di[k] * u[k] + self.up[k] * u[k + si];
        let put = |k: usize, v: f64, out: &mut [f64]| {
            if accumulate {
                out[k] += scale * v;
            } else {
                out[k] = scale * v;
            }
        };
        for l in 0..self.m {
            let k0 = self.k(0, l);
            let h = self.head[l];
            let v = self.di[k0] * u[k0] + self.up[k0] * u[k0 + si] + h[0] * u[k0 + 2 * si] + h[1] * u[k0 + 3 * si];
            put(k0, v, out);
            let kn = self.k(n - 1, l);
            let t = self.tail[l];
            let v = self.di[kn] * u[kn] + self.lo[kn] * u[kn - si] + t[0] * u[kn - 2 * si] + t[1] * u[kn - 3 * si];
            put(kn, v, out);
        }
        if self.stride_l == 1 {
            for i in 1..n - 1 {
                let base = i * si;
                for l in 0..self.m {
                    let k = base + l;
                    put(k, interior(k), out);
                }
            }
        } else {
            for l in 0..self.m {
                let base = l * self.stride_l;
                for i in 1..n - 1 {
                    let k = base + i * si;
                    put(k, interior(k), out);
                }
            }
        }
    }

    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        self.apply_into(u, out, 1.0, false);
    }

    /// Visit every nonzero entry as `(row, col, value)` in flattened indices.
    pub fn for_each_entry(&self, mut f: impl FnMut(usize, usize, f64)) {
        let (n, si) = (self.n, self.stride_i);
        for l in 0..self.m {
            for i in 0..n {
                let k = self.k(i, l);
                let mut push = |c: usize, v: f64| {
                    if v != 0.0 {
                        f(k, c, v)
                    }
                };
                push(k, self.di[k]);
                if i > 0 {
                    push(k - si, self.lo[k]);
                }
                if i + 1 < n {
                    push(k + si, self.up[k]);
                }
                if i == 0 {
                    push(k + 2 * si, self.head[l][0]);
                    push(k + 3 * si, self.head[l][1]);
                }
                if i == n - 1 {
                    push(k - 2 * si, self.tail[l][0]);
                    push(k - 3 * si, self.tail[l][1]);
                }
            }
        }
    }

    /// Dense matrix of line `l` (for tests and fallbacks).
    pub fn line_matrix(&self, l: usize) -> DMatrix<f64> {
        let n = self.n;
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            let k = self.k(i, l);
            a[(i, i)] = self.di[k];
            if i > 0 {
                a[(i, i - 1)] = self.lo[k];
            }
            if i + 1 < n {
                a[(i, i + 1)] = self.up[k];
            }
        }
        a[(0, 2)] += self.head[l][0];
        a[(0, 3)] += self.head[l][1];
        a[(n - 1, n - 3)] += self.tail[l][0];
        a[(n - 1, n - 4)] += self.tail[l][1];
        a
    }

    /// Factor `I - s L` for repeated solves.
    pub fn implicit(&self, s: f64) -> LineSolver {
        LineSolver::new(self, s)
    }

    /// Fill line `l` with `1/2 a f'' + b f' - c f` on `x`, given per-node
    /// coefficient values.
    pub fn set_line(&mut self, l: usize, x: &[f64], a: &[f64], b: &[f64], c: &[f64], lower: BoundaryKind, upper: BoundaryKind) {
        let n = self.n;
        assert_eq!(x.len(), n);
        for i in 1..n - 1 {
            let k = self.k(i, l);
            let e = eta_central(x, i);
            let d = xi_central(x, i);
            self.lo[k] = a[i] * e[0] + b[i] * d[0];
            self.di[k] = a[i] * e[1] + b[i] * d[1] - c[i];
            self.up[k] = a[i] * e[2] + b[i] * d[2];
        }
        let k0 = self.k(0, l);
        match lower {
            BoundaryKind::Dirichlet => {
                self.di[k0] = 0.0;
                self.up[k0] = 0.0;
                self.head[l] = [0.0, 0.0];
            }
            BoundaryKind::Endogenous => {
                let e = eta_forward(x);
                let d = xi_forward(x);
                self.di[k0] = 0.5 * a[0] * e[0] + b[0] * d[0] - c[0];
                self.up[k0] = 0.5 * a[0] * e[1] + b[0] * d[1];
                self.head[l] = [0.5 * a[0] * e[2] + b[0] * d[2], 0.5 * a[0] * e[3]];
            }
        }
        let kn = self.k(n - 1, l);
        match upper {
            BoundaryKind::Dirichlet => {
                self.di[kn] = 0.0;
                self.lo[kn] = 0.0;
                self.tail[l] = [0.0, 0.0];
            }
            BoundaryKind::Endogenous => {
                let e = eta_backward(x);
                let d = xi_backward(x);
                let j = n - 1;
                self.di[kn] = 0.5 * a[j] * e[3] + b[j] * d[2] - c[j];
                self.lo[kn] = 0.5 * a[j] * e[2] + b[j] * d[1];
                self.tail[l] = [0.5 * a[j] * e[1] + b[j] * d[0], 0.5 * a[j] * e[0]];
            }
        }
    }

    pub fn zero_line(&mut self, l: usize) {
        for i in 0..self.n {
            let k = self.k(i, l);
            self.lo[k] = 0.0;
            self.di[k] = 0.0;
            self.up[k] = 0.0;
        }
        self.head[l] = [0.0; 2];
        self.tail[l] = [0.0; 2];
    }
}

/// Single-line operator `1/2 a f'' + b f' - c f`.
pub fn assemble_1d(
    grid: &Grid1D,
    a: impl Fn(f64) -> f64,
    b: impl Fn(f64) -> f64,
    c: impl Fn(f64) -> f64,
    lower: BoundaryKind,
    upper: BoundaryKind,
) -> LineOps {
    let x = &grid.nodes;
    let n = x.len();
    let av: Vec<f64> = x.iter().map(|&v| a(v)).collect();
    let bv: Vec<f64> = x.iter().map(|&v| b(v)).collect();
    let cv: Vec<f64> = x.iter().map(|&v| c(v)).collect();
    let mut ops = LineOps::zeros(n, 1, 1, n);
    ops.set_line(0, x, &av, &bv, &cv, lower, upper);
    ops
}

/// First-derivative operator: central inside, three-point one-sided at the ends.
pub fn first_derivative(grid: &Grid1D) -> LineOps {
    let x = &grid.nodes;
    let n = x.len();
    let mut ops = LineOps::zeros(n, 1, 1, n);
    for i in 1..n - 1 {
        let d = xi_central(x, i);
        ops.lo[i] = d[0];
        ops.di[i] = d[1];
        ops.up[i] = d[2];
    }
    let f = xi_forward(x);
    ops.di[0] = f[0];
    ops.up[0] = f[1];
    ops.head[0] = [f[2], 0.0];
    let b = xi_backward(x);
    ops.lo[n - 1] = b[1];
    ops.di[n - 1] = b[2];
    ops.tail[0] = [b[0], 0.0];
    ops
}

/// Factorization of `I - s L` for every line of a [`LineOps`].
///
/// Banded LU in natural order without pivoting. The four-entry boundary rows
/// only add fill in the first two rows and multipliers in the last one, so
/// the cost stays linear. Lines whose pivots collapse (or that are too short)
/// fall back to a dense LU with partial pivoting.
#[derive(Clone, Debug)]
pub struct LineSolver {
    n: usize,
    m: usize,
    si: usize,
    sl: usize,
    /// sub-diagonal multipliers
    low: Vec<f64>,
    /// `U(i, i+1)`
    up: Vec<f64>,
    inv: Vec<f64>,
    /// `U(0, 2)`, `U(0, 3)`, `U(1, 3)`
    head: Vec<[f64; 3]>,
    /// multipliers of the last row at columns `n-4` and `n-3`
    tail: Vec<[f64; 2]>,
    fallback: Vec<Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>>,
}

impl LineSolver {
    fn new(ops: &LineOps, s: f64) -> Self {
        let (n, m, si, sl) = (ops.n, ops.m, ops.stride_i, ops.stride_l);
        let len = n * m;
        let mut me = LineSolver {
            n,
            m,
            si,
            sl,
            low: vec![0.0; len],
            up: vec![0.0; len],
            inv: vec![0.0; len],
            head: vec![[0.0; 3]; m],
            tail: vec![[0.0; 2]; m],
            fallback: (0..m).map(|_| None).collect(),
        };
        let mut piv = vec![0.0; n];
        let mut u = vec![0.0; n];
        for l in 0..m {
            let k = |i: usize| i * si + l * sl;
            let a = |i: usize| -s * ops.lo[k(i)];
            let b = |i: usize| 1.0 - s * ops.di[k(i)];
            let c = |i: usize| -s * ops.up[k(i)];
            let (h2, h3) = (-s * ops.head[l][0], -s * ops.head[l][1]);
            let (t2, t3) = (-s * ops.tail[l][0], -s * ops.tail[l][1]);
            let mut ok = n >= 6;
            let tiny = |p: f64, scale: f64| !(p.abs() > 1e-13 * scale);
            if ok {
                piv[0] = b(0);
                u[0] = c(0);
                let (u02, u03) = (h2, h3);
                let l1 = a(1) / piv[0];
                piv[1] = b(1) - l1 * u[0];
                u[1] = c(1) - l1 * u02;
                let u13 = -l1 * u03;
                me.low[k(1)] = l1;
                let l2 = a(2) / piv[1];
                piv[2] = b(2) - l2 * u[1];
                u[2] = c(2) - l2 * u13;
                me.low[k(2)] = l2;
                ok = !tiny(piv[0], b(0).abs()) && !tiny(piv[1], b(1).abs() + (l1 * u[0]).abs()) && !tiny(piv[2], b(2).abs() + (l2 * u[1]).abs());
                for i in 3..n - 1 {
                    let li = a(i) / piv[i - 1];
                    piv[i] = b(i) - li * u[i - 1];
                    u[i] = c(i);
                    me.low[k(i)] = li;
                    ok &= !tiny(piv[i], b(i).abs() + (li * u[i - 1]).abs());
                }
                // last row: [t3, t2, a, b] at columns n-4 .. n-1
                let m4 = t3 / piv[n - 4];
                let w3 = t2 - m4 * u[n - 4];
                let m3 = w3 / piv[n - 3];
                let w2 = a(n - 1) - m3 * u[n - 3];
                let m2 = w2 / piv[n - 2];
                piv[n - 1] = b(n - 1) - m2 * u[n - 2];
                ok &= !tiny(piv[n - 1], b(n - 1).abs() + (m2 * u[n - 2]).abs());
                me.low[k(n - 1)] = m2;
                me.tail[l] = [m4, m3];
                me.head[l] = [u02, u03, u13];
                for i in 0..n {
                    me.inv[k(i)] = 1.0 / piv[i];
                    me.up[k(i)] = if i + 1 < n { u[i] } else { 0.0 };
                }
            }
            if !ok {
                let dense = DMatrix::identity(n, n) - ops.line_matrix(l) * s;
                me.fallback[l] = Some(dense.lu());
            }
        }
        me
    }

    /// Solve in place: `r` holds the right-hand side on entry.
    pub fn solve(&self, r: &mut [f64]) {
        let (n, si, sl) = (self.n, self.si, self.sl);
        let saved: Vec<(usize, DVector<f64>)> = self
            .fallback
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_some())
            .map(|(l, _)| (l, DVector::from_iterator(n, (0..n).map(|i| r[l * sl + i * si]))))
            .collect();
        let last = |r: &mut [f64], l: usize| {
            let kn = l * sl + (n - 1) * si;
            let [m4, m3] = self.tail[l];
            r[kn] -= m4 * r[kn - 3 * si] + m3 * r[kn - 2 * si];
        };
        let first_two = |r: &mut [f64], l: usize| {
            let k0 = l * sl;
            let [u02, u03, u13] = self.head[l];
            let (x2, x3) = (r[k0 + 2 * si], r[k0 + 3 * si]);
            let x1 = (r[k0 + si] - self.up[k0 + si] * x2 - u13 * x3) * self.inv[k0 + si];
            r[k0 + si] = x1;
            r[k0] = (r[k0] - self.up[k0] * x1 - u02 * x2 - u03 * x3) * self.inv[k0];
        };
        if sl == 1 {
            let m = self.m;
            for i in 1..n {
                if i == n - 1 {
                    for l in 0..m {
                        last(r, l);
                    }
                }
                let b = i * si;
                for l in 0..m {
                    let k = b + l;
                    r[k] -= self.low[k] * r[k - si];
                }
            }
            let b = (n - 1) * si;
            for l in 0..m {
                r[b + l] *= self.inv[b + l];
            }
            for i in (2..n - 1).rev() {
                let b = i * si;
                for l in 0..m {
                    let k = b + l;
                    r[k] = (r[k] - self.up[k] * r[k + si]) * self.inv[k];
                }
            }
            for l in 0..m {
                first_two(r, l);
            }
        } else {
            for l in 0..self.m {
                if self.fallback[l].is_some() {
                    continue;
                }
                let b = l * sl;
                for i in 1..n - 1 {
                    let k = b + i * si;
                    r[k] -= self.low[k] * r[k - si];
                }
                last(r, l);
                let kn = b + (n - 1) * si;
                r[kn] = (r[kn] - self.low[kn] * r[kn - si]) * self.inv[kn];
                for i in (2..n - 1).rev() {
                    let k = b + i * si;
                    r[k] = (r[k] - self.up[k] * r[k + si]) * self.inv[k];
                }
                first_two(r, l);
            }
        }
        for (l, rhs) in saved {
            if let Some(lu) = &self.fallback[l] {
                let b = l * sl;
                let x = lu.solve(&rhs).expect("singular implicit operator");
                for i in 0..n {
                    r[b + i * si] = x[i];
                }
            }
        }
    }

    pub fn uses_fallback(&self) -> bool {
        self.fallback.iter().any(|f| f.is_some())
    }
}

/// Nine-point mixed-derivative operator `a12 d^2/dx1 dx2`. Interior rows use
/// central weights; rows on an endogenous edge use the one-sided weights of
/// that edge. Rows with `coef == 0` (Dirichlet edges) are zero.
#[derive(Clone, Debug)]
pub struct CrossOp {
    pub n1: usize,
    pub n2: usize,
    pub coef: Vec<f64>,
    /// Per node along x1: first index of the 3-point stencil and its weights.
    pub xi1: Vec<(usize, [f64; 3])>,
    pub xi2: Vec<(usize, [f64; 3])>,
}

/// First-derivative stencils for every node of a grid.
pub fn xi_all(x: &[f64]) -> Vec<(usize, [f64; 3])> {
    let n = x.len();
    (0..n)
        .map(|i| {
            if i == 0 {
                (0, xi_forward(x))
            } else if i == n - 1 {
                (n - 3, xi_backward(x))
            } else {
                (i - 1, xi_central(x, i))
            }
        })
        .collect()
}

impl CrossOp {
    pub fn apply_into(&self, u: &[f64], out: &mut [f64], scale: f64, accumulate: bool) {
        let n2 = self.n2;
        for i1 in 0..self.n1 {
            let (s1, w1) = self.xi1[i1];
            for i2 in 0..n2 {
                let k = i1 * n2 + i2;
                let c = self.coef[k];
                if c == 0.0 {
                    if !accumulate {
                        out[k] = 0.0;
                    }
                    continue;
                }
                let (s2, w2) = self.xi2[i2];
                let mut acc = 0.0;
                for p in 0..3 {
                    let r = (s1 + p) * n2 + s2;
                    acc += w1[p] * (w2[0] * u[r] + w2[1] * u[r + 1] + w2[2] * u[r + 2]);
                }
                let v = scale * c * acc;
                if accumulate {
                    out[k] += v;
                } else {
                    out[k] = v;
                }
            }
        }
    }

    pub fn for_each_entry(&self, mut f: impl FnMut(usize, usize, f64)) {
        let n2 = self.n2;
        for i1 in 0..self.n1 {
            let (s1, w1) = self.xi1[i1];
            for i2 in 0..n2 {
                let k = i1 * n2 + i2;
                let c = self.coef[k];
                if c == 0.0 {
                    continue;
                }
                let (s2, w2) = self.xi2[i2];
                for p in 0..3 {
                    for q in 0..3 {
                        f(k, (s1 + p) * n2 + s2 + q, c * w1[p] * w2[q]);
                    }
                }
            }
        }
    }
}

/// Coefficients of `1/2 a11 U11 + b1 U1 - c1 U + a12 U12 + 1/2 a22 U22 + b2 U2 - c2 U`.
pub trait Coefficients {
    fn a11(&self, x1: f64, x2: f64) -> f64;
    fn b1(&self, _x1: f64, _x2: f64) -> f64 {
        0.0
    }
    fn c1(&self, _x1: f64, _x2: f64) -> f64 {
        0.0
    }
    fn a12(&self, x1: f64, x2: f64) -> f64;
    fn a22(&self, x1: f64, x2: f64) -> f64;
    fn b2(&self, _x1: f64, _x2: f64) -> f64 {
        0.0
    }
    fn c2(&self, _x1: f64, _x2: f64) -> f64 {
        0.0
    }
}

/// The reduced pricing PDE of a model. The `-omega/2 x2 U` term sits in `L11`.
pub struct ModelCoefficients<'a>(pub &'a QlsvModel);

impl Coefficients for ModelCoefficients<'_> {
    fn a11(&self, _x1: f64, x2: f64) -> f64 {
        x2
    }
    fn c1(&self, _x1: f64, x2: f64) -> f64 {
        0.5 * self.0.omega() * x2
    }
    fn a12(&self, _x1: f64, x2: f64) -> f64 {
        let p = &self.0.params;
        p.rho * p.epsilon * x2
    }
    fn a22(&self, _x1: f64, x2: f64) -> f64 {
        let e = self.0.params.epsilon;
        e * e * x2
    }
    fn b2(&self, x1: f64, x2: f64) -> f64 {
        let p = &self.0.params;
        p.kappa - (p.kappa - p.rho * p.epsilon * self.0.btilde(x1)) * x2
    }
}

/// Boundary treatment of the four edges: x1 low, x1 high, x2 low, x2 high.
pub type EdgeKinds = [BoundaryKind; 4];

#[derive(Clone, Debug)]
pub struct SplitOperator {
    pub grid: Grid2D,
    pub l11: LineOps,
    pub l22: LineOps,
    pub l12: CrossOp,
    pub edges: EdgeKinds,
}

impl SplitOperator {
    pub fn size(&self) -> usize {
        self.grid.size()
    }

    /// Nodes whose value is fixed by a Dirichlet edge.
    pub fn is_fixed(&self, i1: usize, i2: usize) -> bool {
        let (n1, n2) = (self.grid.n1(), self.grid.n2());
        (i1 == 0 && self.edges[0] == BoundaryKind::Dirichlet)
            || (i1 == n1 - 1 && self.edges[1] == BoundaryKind::Dirichlet)
            || (i2 == 0 && self.edges[2] == BoundaryKind::Dirichlet)
            || (i2 == n2 - 1 && self.edges[3] == BoundaryKind::Dirichlet)
    }

    pub fn apply_full(&self, u: &[f64], out: &mut [f64], scale: f64) {
        self.l11.apply_into(u, out, scale, false);
        self.l22.apply_into(u, out, scale, true);
        self.l12.apply_into(u, out, scale, true);
    }

    /// All entries of `L` as `(row, col, value)` (duplicates summed by the caller).
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::new();
        self.l11.for_each_entry(|r, c, v| t.push((r, c, v)));
        self.l22.for_each_entry(|r, c, v| t.push((r, c, v)));
        self.l12.for_each_entry(|r, c, v| t.push((r, c, v)));
        t
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.size();
        let mut a = DMatrix::zeros(n, n);
        for (r, c, v) in self.triplets() {
            a[(r, c)] += v;
        }
        a
    }
}

/// Assemble the split operator for arbitrary coefficients.
pub fn assemble_split_with(grid: &Grid2D, coeffs: &dyn Coefficients, edges: EdgeKinds) -> SplitOperator {
    let (n1, n2) = (grid.n1(), grid.n2());
    let x1 = &grid.x1.nodes;
    let x2 = &grid.x2.nodes;
    let mut l11 = LineOps::zeros(n1, n2, n2, 1);
    let mut l22 = LineOps::zeros(n2, n1, 1, n2);
    let dir = BoundaryKind::Dirichlet;
    for l in 0..n2 {
        if (l == 0 && edges[2] == dir) || (l == n2 - 1 && edges[3] == dir) {
            continue;
        }
        let y = x2[l];
        let a: Vec<f64> = x1.iter().map(|&x| coeffs.a11(x, y)).collect();
        let b: Vec<f64> = x1.iter().map(|&x| coeffs.b1(x, y)).collect();
        let c: Vec<f64> = x1.iter().map(|&x| coeffs.c1(x, y)).collect();
        l11.set_line(l, x1, &a, &b, &c, edges[0], edges[1]);
    }
    for l in 0..n1 {
        if (l == 0 && edges[0] == dir) || (l == n1 - 1 && edges[1] == dir) {
            continue;
        }
        let x = x1[l];
        let a: Vec<f64> = x2.iter().map(|&y| coeffs.a22(x, y)).collect();
        let b: Vec<f64> = x2.iter().map(|&y| coeffs.b2(x, y)).collect();
        let c: Vec<f64> = x2.iter().map(|&y| coeffs.c2(x, y)).collect();
        l22.set_line(l, x2, &a, &b, &c, edges[2], edges[3]);
    }
    // Dirichlet rows inside the perpendicular lines are already zero rows;
    // make sure the fixed lines stay fixed.
    if edges[2] == dir {
        l11.zero_line(0);
    }
    if edges[3] == dir {
        l11.zero_line(n2 - 1);
    }
    if edges[0] == dir {
        l22.zero_line(0);
    }
    if edges[1] == dir {
        l22.zero_line(n1 - 1);
    }
    let mut coef = vec![0.0; n1 * n2];
    for i1 in 0..n1 {
        for i2 in 0..n2 {
            let fixed = (i1 == 0 && edges[0] == dir)
                || (i1 == n1 - 1 && edges[1] == dir)
                || (i2 == 0 && edges[2] == dir)
                || (i2 == n2 - 1 && edges[3] == dir);
            if !fixed {
                coef[i1 * n2 + i2] = coeffs.a12(x1[i1], x2[i2]);
            }
        }
    }
    let xi1 = xi_all(x1);
    let xi2 = xi_all(x2);
    SplitOperator { grid: grid.clone(), l11, l22, l12: CrossOp { n1, n2, coef, xi1, xi2 }, edges }
}

/// Split operator of a transformed pricing problem. The variance direction is
/// closed endogenously at both ends.
pub fn assemble_split(problem: &TransformedProblem, grid: &Grid2D) -> Result<SplitOperator> {
    let x1 = &grid.x1.nodes;
    let tol = 1e-12 * (1.0 + problem.x_lower.abs().max(problem.x_upper.abs()));
    if (x1[0] - problem.x_lower).abs() > tol || (x1[x1.len() - 1] - problem.x_upper).abs() > tol {
        return Err(QlsvError::Grid("x1 grid must span the problem domain".into()));
    }
    if grid.x2.nodes[0] != 0.0 {
        return Err(QlsvError::Grid("variance grid must start at zero".into()));
    }
    let edges = [problem.lower, problem.upper, BoundaryKind::Endogenous, BoundaryKind::Endogenous];
    Ok(assemble_split_with(grid, &ModelCoefficients(&problem.model), edges))
}

/// Initial field of a problem on a grid; Dirichlet edges carry the rebate.
pub fn initial_field(problem: &TransformedProblem, grid: &Grid2D) -> Vec<f64> {
    let (n1, n2) = (grid.n1(), grid.n2());
    let mut u = vec![0.0; n1 * n2];
    for i1 in 0..n1 {
        let x = grid.x1.nodes[i1];
        let v = if i1 == 0 && problem.lower == BoundaryKind::Dirichlet {
            problem.boundary_value(false)
        } else if i1 == n1 - 1 && problem.upper == BoundaryKind::Dirichlet {
            problem.boundary_value(true)
        } else {
            problem.initial(x)
        };
        for i2 in 0..n2 {
            u[i1 * n2 + i2] = v;
        }
    }
    u
}
