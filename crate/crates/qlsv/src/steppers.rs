//! Time stepping for `U_tau = (L11 + L12 + L22) U`: explicit Euler, the
//! squared-propagator shortcut, and four ADI schemes (Douglas,
//! Craig-Sneyd, modified Craig-Sneyd and Hundsdorfer-Verwer).

use crate::discretize::{LineSolver, SplitOperator};
use crate::error::{invalid, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Explicit,
    Douglas,
    CraigSneyd,
    /// modified Craig-Sneyd
    InTHoutWelfert,
    HundsdorferVerwer,
}

impl Scheme {
    pub const ADI: [Scheme; 4] = [Scheme::Douglas, Scheme::CraigSneyd, Scheme::InTHoutWelfert, Scheme::HundsdorferVerwer];

    pub fn default_varsigma(self) -> f64 {
        match self {
            Scheme::Explicit => 0.0,
            Scheme::Douglas | Scheme::CraigSneyd => 0.5,
            Scheme::InTHoutWelfert => 1.0 / 3.0,
            Scheme::HundsdorferVerwer => 0.5 + 0.5 * (1.0f64 / 3.0).sqrt(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Explicit => "explicit",
            Scheme::Douglas => "Do",
            Scheme::CraigSneyd => "CS",
            Scheme::InTHoutWelfert => "HW",
            Scheme::HundsdorferVerwer => "HV",
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        match s.to_ascii_lowercase().as_str() {
            "explicit" => Ok(Scheme::Explicit),
            "do" | "douglas" => Ok(Scheme::Douglas),
            "cs" | "craig-sneyd" => Ok(Scheme::CraigSneyd),
            "hw" | "mcs" => Ok(Scheme::InTHoutWelfert),
            "hv" => Ok(Scheme::HundsdorferVerwer),
            _ => invalid(format!("unknown scheme '{s}'")),
        }
    }
}

/// One-step propagator with factorizations cached for a fixed step size.
pub struct AdiStepper<'a> {
    op: &'a SplitOperator,
    scheme: Scheme,
    dt: f64,
    vs: f64,
    s11: Option<LineSolver>,
    s22: Option<LineSolver>,
    a11: Vec<f64>,
    a22: Vec<f64>,
    y0: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl<'a> AdiStepper<'a> {
    pub fn new(op: &'a SplitOperator, scheme: Scheme, dt: f64, varsigma: Option<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return invalid("time step must be positive");
        }
        let vs = varsigma.unwrap_or_else(|| scheme.default_varsigma());
        if !(0.0..=1.0).contains(&vs) {
            return invalid("varsigma must lie in [0, 1]");
        }
        let implicit = scheme != Scheme::Explicit && vs > 0.0;
        let n = op.size();
        Ok(AdiStepper {
            op,
            scheme,
            dt,
            vs,
            s11: implicit.then(|| op.l11.implicit(vs * dt)),
            s22: implicit.then(|| op.l22.implicit(vs * dt)),
            a11: vec![0.0; n],
            a22: vec![0.0; n],
            y0: vec![0.0; n],
            y: vec![0.0; n],
            d: vec![0.0; n],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn solve11(&self, r: &mut [f64]) {
        if let Some(s) = &self.s11 {
            s.solve(r);
        }
    }

    fn solve22(&self, r: &mut [f64]) {
        if let Some(s) = &self.s22 {
            s.solve(r);
        }
    }

    pub fn step(&mut self, u: &mut [f64]) {
        let op = self.op;
        let dt = self.dt;
        let n = u.len();
        if self.scheme == Scheme::Explicit {
            op.apply_full(u, &mut self.y, dt);
            for k in 0..n {
                u[k] += self.y[k];
            }
            return;
        }
        let c = self.vs * dt;
        op.l11.apply_into(u, &mut self.a11, 1.0, false);
        op.l22.apply_into(u, &mut self.a22, 1.0, false);
        // Y0 = U + dt L U
        op.l12.apply_into(u, &mut self.y0, dt, false);
        for k in 0..n {
            self.y0[k] += u[k] + dt * (self.a11[k] + self.a22[k]);
        }
        // Y1, Y2
        for k in 0..n {
            self.y[k] = self.y0[k] - c * self.a11[k];
        }
        let mut y = std::mem::take(&mut self.y);
        self.solve11(&mut y);
        for k in 0..n {
            y[k] -= c * self.a22[k];
        }
        self.solve22(&mut y);
        if self.scheme == Scheme::Douglas {
            u.copy_from_slice(&y);
            self.y = y;
            return;
        }
        // D = Y2 - U
        for k in 0..n {
            self.d[k] = y[k] - u[k];
        }
        let mut yt = std::mem::take(&mut self.y0);
        match self.scheme {
            Scheme::CraigSneyd => op.l12.apply_into(&self.d, &mut yt, 0.5 * dt, true),
            Scheme::InTHoutWelfert => {
                op.l12.apply_into(&self.d, &mut yt, 0.5 * dt, true);
                let w = (0.5 - self.vs) * dt;
                op.l11.apply_into(&self.d, &mut yt, w, true);
                op.l22.apply_into(&self.d, &mut yt, w, true);
            }
            Scheme::HundsdorferVerwer => op.apply_full_acc(&self.d, &mut yt, 0.5 * dt),
            _ => unreachable!(),
        }
        if self.scheme == Scheme::HundsdorferVerwer {
            // corrections relative to Y2
            op.l11.apply_into(&y, &mut self.a11, 1.0, false);
            op.l22.apply_into(&y, &mut self.a22, 1.0, false);
        }
        for k in 0..n {
            yt[k] -= c * self.a11[k];
        }
        self.solve11(&mut yt);
        for k in 0..n {
            yt[k] -= c * self.a22[k];
        }
        self.solve22(&mut yt);
        u.copy_from_slice(&yt);
        self.y0 = yt;
        self.y = y;
    }

    /// Dense one-step map (small grids, diagnostics only).
    pub fn step_matrix(&mut self) -> DMatrix<f64> {
        let n = self.op.size();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            self.step(&mut e);
            for i in 0..n {
                m[(i, j)] = e[i];
            }
        }
        m
    }
}

impl SplitOperator {
    /// `out += scale * L u`
    pub fn apply_full_acc(&self, u: &[f64], out: &mut [f64], scale: f64) {
        self.l11.apply_into(u, out, scale, true);
        self.l22.apply_into(u, out, scale, true);
        self.l12.apply_into(u, out, scale, true);
    }
}

/// March `u0` to `tau` in `steps` equal steps.
pub fn time_march(op: &SplitOperator, u0: &[f64], tau: f64, steps: usize, scheme: Scheme, varsigma: Option<f64>) -> Result<Vec<f64>> {
    if steps == 0 {
        return invalid("need at least one time step");
    }
    let mut st = AdiStepper::new(op, scheme, tau / steps as f64, varsigma)?;
    let mut u = u0.to_vec();
    for _ in 0..steps {
        st.step(&mut u);
    }
    Ok(u)
}

/// Compressed sparse rows.
#[derive(Clone, Debug)]
pub struct Csr {
    pub n: usize,
    pub ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Csr {
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut ptr = vec![0; n + 1];
        let mut col = Vec::with_capacity(t.len());
        let mut val: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(c);
                val.push(v);
                ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            ptr[r + 1] += ptr[r];
        }
        Csr { n, ptr, col, val }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| (self.ptr[r]..self.ptr[r + 1]).map(|k| self.val[k] * x[self.col[k]]).sum())
            .collect()
    }

    /// Sparse product `self * other` (Gustavson).
    pub fn mul(&self, other: &Csr) -> Csr {
        let n = self.n;
        let mut acc = vec![0.0; n];
        let mut mark = vec![usize::MAX; n];
        let mut ptr = vec![0; n + 1];
        let mut col = Vec::new();
        let mut val = Vec::new();
        let mut cols: Vec<usize> = Vec::new();
        for r in 0..n {
            cols.clear();
            for k in self.ptr[r]..self.ptr[r + 1] {
                let (c, a) = (self.col[k], self.val[k]);
                for j in other.ptr[c]..other.ptr[c + 1] {
                    let cc = other.col[j];
                    if mark[cc] != r {
                        mark[cc] = r;
                        acc[cc] = 0.0;
                        cols.push(cc);
                    }
                    acc[cc] += a * other.val[j];
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                col.push(c);
                val.push(acc[c]);
            }
            ptr[r + 1] = col.len();
        }
        Csr { n, ptr, col, val }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.ptr[r]..self.ptr[r + 1] {
                m[(r, self.col[k])] += self.val[k];
            }
        }
        m
    }
}

/// Above this many unknowns squaring stays sparse.
const DENSE_LIMIT: usize = 2500;

/// `(I + dt L)^(2^squarings) u0` with `dt = tau / 2^squarings`, computed by
/// repeated squaring of the explicit propagator. Stable only when the
/// explicit step is.
pub fn fast_exp(op: &SplitOperator, u0: &[f64], tau: f64, squarings: u32) -> Result<Vec<f64>> {
    if squarings > 40 {
        return invalid("too many squarings");
    }
    let n = op.size();
    let dt = tau / 2f64.powi(squarings as i32);
    let mut t: Vec<(usize, usize, f64)> = op.triplets().into_iter().map(|(r, c, v)| (r, c, dt * v)).collect();
    t.extend((0..n).map(|k| (k, k, 1.0)));
    let p = Csr::from_triplets(n, t);
    if n <= DENSE_LIMIT {
        let mut d = p.to_dense();
        for _ in 0..squarings {
            d = &d * &d;
        }
        let v = d * nalgebra::DVector::from_column_slice(u0);
        return Ok(v.as_slice().to_vec());
    }
    let mut q = p;
    for _ in 0..squarings {
        q = q.mul(&q);
    }
    Ok(q.mul_vec(u0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{assemble_split_with, Coefficients, Grid1D, Grid2D};
    use crate::model::BoundaryKind;

    struct Heat {
        rho: f64,
    }
    impl Coefficients for Heat {
        fn a11(&self, _: f64, _: f64) -> f64 {
            1.0
        }
        fn a12(&self, _: f64, _: f64) -> f64 {
            self.rho
        }
        fn a22(&self, _: f64, _: f64) -> f64 {
            1.0
        }
        fn b2(&self, _: f64, y: f64) -> f64 {
            0.2 - 0.1 * y
        }
    }

    fn op(rho: f64, n: usize, edges: [BoundaryKind; 4]) -> SplitOperator {
        let g = Grid2D::new(Grid1D::uniform(0.0, 1.0, n - 1).unwrap(), Grid1D::uniform(0.0, 1.0, n - 1).unwrap());
        assemble_split_with(&g, &Heat { rho }, edges)
    }

    fn bump(o: &SplitOperator) -> Vec<f64> {
        let g = &o.grid;
        let mut u = vec![0.0; g.size()];
        for i in 0..g.n1() {
            for j in 0..g.n2() {
                let (x, y) = (g.x1.nodes[i], g.x2.nodes[j]);
                if !o.is_fixed(i, j) {
                    u[g.index(i, j)] = (std::f64::consts::PI * x).sin() * (1.0 + y * y);
                }
            }
        }
        u
    }

    #[test]
    fn douglas_with_zero_weight_is_explicit() {
        let o = op(0.4, 8, [BoundaryKind::Dirichlet; 4]);
        let u0 = bump(&o);
        let a = time_march(&o, &u0, 0.01, 10, Scheme::Douglas, Some(0.0)).unwrap();
        let b = time_march(&o, &u0, 0.01, 10, Scheme::Explicit, None).unwrap();
        for k in 0..a.len() {
            assert!((a[k] - b[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn fast_exp_equals_repeated_explicit_steps() {
        let o = op(0.3, 7, [BoundaryKind::Dirichlet, BoundaryKind::Endogenous, BoundaryKind::Endogenous, BoundaryKind::Endogenous]);
        let u0 = bump(&o);
        let a = fast_exp(&o, &u0, 0.002, 5).unwrap();
        let b = time_march(&o, &u0, 0.002, 32, Scheme::Explicit, None).unwrap();
        for k in 0..a.len() {
            assert!((a[k] - b[k]).abs() < 1e-12);
        }
        // sparse squaring path agrees with the dense one
        let n = o.size();
        let mut t: Vec<_> = o.triplets().into_iter().map(|(r, c, v)| (r, c, 1e-4 * v)).collect();
        t.extend((0..n).map(|k| (k, k, 1.0)));
        let p = Csr::from_triplets(n, t);
        let d = p.to_dense();
        let err = (p.mul(&p).to_dense() - &d * &d).abs().max();
        assert!(err < 1e-15);
    }

    #[test]
    fn craig_sneyd_equals_douglas_without_cross_term() {
        let o = op(0.0, 9, [BoundaryKind::Dirichlet; 4]);
        let u0 = bump(&o);
        let a = time_march(&o, &u0, 0.1, 5, Scheme::Douglas, None).unwrap();
        let b = time_march(&o, &u0, 0.1, 5, Scheme::CraigSneyd, None).unwrap();
        let c = time_march(&o, &u0, 0.1, 5, Scheme::HundsdorferVerwer, None).unwrap();
        let dab: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let dac: f64 = a.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(dab < 1e-15);
        assert!(dac > 1e-8);
    }

    #[test]
    fn dirichlet_values_stay_fixed() {
        let o = op(0.5, 8, [BoundaryKind::Dirichlet; 4]);
        let mut u0 = bump(&o);
        let g = o.grid.clone();
        for i in 0..g.n1() {
            u0[g.index(i, 0)] = 0.7;
        }
        for s in Scheme::ADI {
            let u = time_march(&o, &u0, 0.5, 7, s, None).unwrap();
            for i in 0..g.n1() {
                assert_eq!(u[g.index(i, 0)], 0.7);
            }
        }
    }

    #[test]
    fn douglas_is_stable_for_large_steps() {
        // no cross term, half weight: spectral radius of the step map <= 1
        let o = op(0.0, 8, [BoundaryKind::Dirichlet; 4]);
        let mut st = AdiStepper::new(&o, Scheme::Douglas, 50.0, None).unwrap();
        let m = st.step_matrix();
        // Gelfand: rho = lim |M^k|^(1/k)
        let mut p = m;
        for _ in 0..14 {
            p = &p * &p;
        }
        let r = p.norm().powf(1.0 / 16384.0);
        assert!(r <= 1.0 + 2e-4, "spectral radius {r}");
    }

    #[test]
    fn second_order_schemes_converge_in_time() {
        let o = op(0.5, 12, [BoundaryKind::Dirichlet; 4]);
        let u0 = bump(&o);
        let reference = time_march(&o, &u0, 0.2, 4096, Scheme::CraigSneyd, None).unwrap();
        for s in [Scheme::CraigSneyd, Scheme::InTHoutWelfert, Scheme::HundsdorferVerwer] {
            let e = |n: usize| {
                let u = time_march(&o, &u0, 0.2, n, s, None).unwrap();
                u.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            };
            let ratio = e(8) / e(16);
            assert!(ratio > 3.3, "{} ratio {ratio}", s.name());
        }
    }
}
