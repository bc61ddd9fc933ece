//! Power series of the price in `rho * epsilon`.
//!
//! Every term is built from the affine solution of the uncorrelated variance
//! problem `w_tau = 1/2 eps^2 x2 w'' + kappa (1 - x2) w' - 1/2 lambda x2 w`,
//! `w(0) = exp(psi x2)`, its first three `psi`-derivatives, and integrals over
//! ordered time sets mapped to the unit cube.

use crate::error::{invalid, Result};
use crate::galerkin::{GalerkinSystem, SineBasis};
use crate::model::TransformedProblem;
use crate::quad::bode_rule;
use num_complex::Complex64;

pub const MAX_ORDER: usize = 3;

/// `A`, `B` and their first three `psi`-derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTerms {
    pub a: f64,
    pub b: f64,
    /// `dA/dpsi`, `d2A/dpsi2`, `d3A/dpsi3`
    pub da: [f64; 3],
    pub db: [f64; 3],
}

/// `varpi(lambda) = sqrt(kappa^2 + eps^2 lambda)`.
pub fn varpi(lambda: f64, kappa: f64, epsilon: f64) -> Result<f64> {
    let w2 = kappa * kappa + epsilon * epsilon * lambda;
    if !(w2 > 0.0) {
        return invalid(format!("lambda = {lambda} leaves the real affine regime"));
    }
    Ok(w2.sqrt())
}

/// `(A, B)` at `(tau, lambda, psi)`.
pub fn affine_ab(tau: f64, lambda: f64, psi: f64, kappa: f64, epsilon: f64) -> Result<(f64, f64)> {
    let w = varpi(lambda, kappa, epsilon)?;
    let t = affine_terms(tau, w, psi, kappa, epsilon);
    Ok((t.a, t.b))
}

/// Affine quantities for a precomputed `varpi`.
#[inline]
pub fn affine_terms(tau: f64, w: f64, psi: f64, kappa: f64, epsilon: f64) -> AffineTerms {
    let e2 = epsilon * epsilon;
    let xp = w - kappa;
    let xm = w + kappa;
    let ex = (-w * tau).exp();
    let ups = (xm - e2 * psi) + (xp + e2 * psi) * ex;
    let a = -kappa / e2 * (xp * tau + 2.0 * (ups / (2.0 * w)).ln());
    let b = -(xp * (xm - e2 * psi) - xm * (xp + e2 * psi) * ex) / (e2 * ups);
    let om = (1.0 - ex) / ups;
    let th = w * w * ex / (ups * ups);
    AffineTerms {
        a,
        b,
        da: [2.0 * kappa * om, 2.0 * kappa * e2 * om * om, 4.0 * kappa * e2 * e2 * om * om * om],
        db: [4.0 * th, 8.0 * e2 * th * om, 24.0 * e2 * e2 * th * om * om],
    }
}

/// `D[l][m]`: coefficient of `x2^m` in `exp(-A-B x2) d^l/dpsi^l exp(A+B x2)`.
pub fn d_table(t: &AffineTerms) -> [[f64; 4]; 4] {
    let [a1, a2, a3] = t.da;
    let [b1, b2, b3] = t.db;
    [
        [1.0, 0.0, 0.0, 0.0],
        [a1, b1, 0.0, 0.0],
        [a1 * a1 + a2, 2.0 * a1 * b1 + b2, b1 * b1, 0.0],
        [
            a1 * a1 * a1 + 3.0 * a1 * a2 + a3,
            3.0 * (a1 * a1 * b1 + a1 * b2 + a2 * b1) + b3,
            3.0 * (a1 * b1 * b1 + b1 * b2),
            b1 * b1 * b1,
        ],
    ]
}

/// One step of the `C` recurrence: from the degree `n-1` coefficients
/// `prev` and the previous segment's `B`, produce degree `n` coefficients.
pub fn c_step(prev: &[f64; 4], n: usize, b_prev: f64, d: &[[f64; 4]; 4]) -> [f64; 4] {
    debug_assert!((1..=MAX_ORDER).contains(&n));
    let mut src = [0.0; 4];
    for l in 1..=n {
        let lower = prev[l - 1];
        let same = if l < n { prev[l] } else { 0.0 };
        src[l] = b_prev * lower + l as f64 * same;
    }
    let mut c = [0.0; 4];
    for m in 0..=n {
        c[m] = (1..=n).map(|l| src[l] * d[l][m]).sum();
    }
    c
}

/// Quadrature rule on `[0, 1]` used along every cube axis.
#[derive(Clone, Debug)]
pub struct CubeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CubeRule {
    /// Composite Bode rule with `nodes = 4m + 1` points.
    pub fn bode(nodes: usize) -> Self {
        let (x, w) = bode_rule(nodes);
        CubeRule { nodes: x, weights: w }
    }

    /// Bode rule in `s` with `xi = 3 s^2 - 2 s^3`, which clusters nodes at
    /// both ends where short segments make the integrand vary fastest.
    pub fn graded_bode(nodes: usize) -> Self {
        let (s, w) = bode_rule(nodes);
        let x = s.iter().map(|&s| s * s * (3.0 - 2.0 * s)).collect();
        let w = s.iter().zip(&w).map(|(&s, &w)| w * 6.0 * s * (1.0 - s)).collect();
        CubeRule { nodes: x, weights: w }
    }
}

/// Integral of `f(tau_1, .., tau_n)` over `0 < tau_1 < .. < tau_n < tau`.
pub fn integrate_simplex(mut f: impl FnMut(&[f64]) -> f64, tau: f64, n: usize, rule: &CubeRule) -> f64 {
    fn rec(f: &mut dyn FnMut(&[f64]) -> f64, ts: &mut Vec<f64>, tau: f64, n: usize, rule: &CubeRule, w: f64) -> f64 {
        if ts.len() == n {
            return w * f(ts);
        }
        let t0 = ts.last().copied().unwrap_or(0.0);
        let span = tau - t0;
        let mut acc = 0.0;
        for (&x, &wq) in rule.nodes.iter().zip(&rule.weights) {
            ts.push(t0 + span * x);
            acc += rec(f, ts, tau, n, rule, w * wq * span);
            ts.pop();
        }
        acc
    }
    let mut ts = Vec::with_capacity(n);
    rec(&mut f, &mut ts, tau, n, rule, 1.0)
}

/// Mode data for the chain sums: decay rates, sparse coupling
/// (`coupling[k]` lists `(l, mu_kl)`: mode `k` feeds mode `l`), and the
/// initial amplitudes.
#[derive(Clone, Debug)]
pub struct ChainData {
    pub lambda: Vec<f64>,
    pub coupling: Vec<Vec<(usize, f64)>>,
    pub nu: Vec<f64>,
}

impl ChainData {
    pub fn from_system(sys: &GalerkinSystem) -> Self {
        let m = sys.basis.m;
        let coupling = (0..m)
            .map(|k| (0..m).filter(|&l| sys.mu[(k, l)].abs() > 1e-14).map(|l| (l, sys.mu[(k, l)])).collect())
            .collect();
        ChainData { lambda: sys.lambda.clone(), coupling, nu: sys.nu.clone() }
    }
}

struct ChainWalk<'a> {
    data: &'a ChainData,
    w: Vec<f64>,
    kappa: f64,
    epsilon: f64,
    tau: f64,
    x2: f64,
    order: usize,
    rule: &'a CubeRule,
    out: Vec<f64>,
}

impl ChainWalk<'_> {
    /// Segment `j` starts at `t0`, runs mode `k` from `exp(psi x2)` data with
    /// accumulated exponent `a_acc` and, for `j > 0`, previous coefficients `c`.
    fn segment(&mut self, j: usize, t0: f64, k: usize, psi: f64, a_acc: f64, c: &[f64; 4], weight: f64) {
        let w = self.w[k];
        if j == self.order {
            let t = affine_terms(self.tau - t0, w, psi, self.kappa, self.epsilon);
            let cn = if j == 0 { [1.0, 0.0, 0.0, 0.0] } else { c_step(c, j, psi, &d_table(&t)) };
            let mut poly = 0.0;
            for m in (0..=j).rev() {
                poly = poly * self.x2 + cn[m];
            }
            self.out[k] += weight * poly * (a_acc + t.a + t.b * self.x2).exp();
            return;
        }
        let span = self.tau - t0;
        let data = self.data;
        let rule = self.rule;
        for (&xi, &wq) in rule.nodes.iter().zip(&rule.weights) {
            if wq == 0.0 {
                continue;
            }
            let len = span * xi;
            let t = affine_terms(len, w, psi, self.kappa, self.epsilon);
            let cj = if j == 0 { [1.0, 0.0, 0.0, 0.0] } else { c_step(c, j, psi, &d_table(&t)) };
            let wj = weight * wq * span;
            for &(l, mu) in &data.coupling[k] {
                self.segment(j + 1, t0 + len, l, t.b, a_acc + t.a, &cj, wj * mu);
            }
        }
    }
}

/// Mode amplitudes of the order-`n` term at `(tau, x2)`, `n = 0..=order`,
/// without the `(rho eps)^n` factor.
pub fn chain_terms(data: &ChainData, kappa: f64, epsilon: f64, tau: f64, x2: f64, order: usize, rule: &CubeRule) -> Result<Vec<Vec<f64>>> {
    if order > MAX_ORDER {
        return invalid(format!("expansion order is limited to {MAX_ORDER}"));
    }
    if !(tau > 0.0) {
        return invalid("tau must be positive");
    }
    let w = data.lambda.iter().map(|&l| varpi(l, kappa, epsilon)).collect::<Result<Vec<_>>>()?;
    let m = data.lambda.len();
    let mut terms = Vec::with_capacity(order + 1);
    for n in 0..=order {
        let mut walk = ChainWalk { data, w: w.clone(), kappa, epsilon, tau, x2, order: n, rule, out: vec![0.0; m] };
        for k in 0..m {
            if data.nu[k] != 0.0 {
                walk.segment(0, 0.0, k, 0.0, 0.0, &[0.0; 4], data.nu[k]);
            }
        }
        terms.push(walk.out);
    }
    Ok(terms)
}

/// Expansion of a double-no-touch price on its sine basis.
#[derive(Clone, Debug)]
pub struct ExpansionResult {
    pub basis: SineBasis,
    pub rho_eps: f64,
    /// `terms[n][k]`: amplitude of mode `k` in the order-`n` term
    pub terms: Vec<Vec<f64>>,
}

impl ExpansionResult {
    /// Sum of the first `order + 1` terms at `x1`.
    pub fn value(&self, x1: f64, order: usize) -> f64 {
        let e = self.basis.eval_all(x1);
        let mut acc = 0.0;
        let mut f = 1.0;
        for n in 0..=order.min(self.terms.len() - 1) {
            acc += f * self.terms[n].iter().zip(&e).map(|(u, e)| u * e).sum::<f64>();
            f *= self.rho_eps;
        }
        acc
    }

    /// Order-`n` term alone (no `rho eps` factor).
    pub fn term(&self, x1: f64, n: usize) -> f64 {
        let e = self.basis.eval_all(x1);
        self.terms[n].iter().zip(&e).map(|(u, e)| u * e).sum()
    }
}

/// Price a problem with Dirichlet ends on `modes` sine modes.
pub fn price_expansion(problem: &TransformedProblem, modes: usize, order: usize, tau: f64, x2: f64, rule: &CubeRule) -> Result<ExpansionResult> {
    let sys = GalerkinSystem::new(problem, modes)?;
    let data = ChainData::from_system(&sys);
    let p = &problem.model.params;
    let terms = chain_terms(&data, p.kappa, p.epsilon, tau, x2, order, rule)?;
    Ok(ExpansionResult { basis: sys.basis.clone(), rho_eps: p.rho * p.epsilon, terms })
}

/// Heston Fourier mode `exp(i varkappa x1)`: the coefficients of `rho^n`,
/// `n = 0..=order`, of `exp(A + B x2)` predicted by the expansion.
pub fn heston_mode_terms(kappa: f64, epsilon: f64, varkappa: f64, tau: f64, x2: f64, order: usize, rule: &CubeRule) -> Result<Vec<Complex64>> {
    let data = ChainData { lambda: vec![varkappa * varkappa + 0.25], coupling: vec![vec![(0, 1.0)]], nu: vec![1.0] };
    let terms = chain_terms(&data, kappa, epsilon, tau, x2, order, rule)?;
    let mu = Complex64::new(0.5, varkappa) * epsilon;
    Ok(terms.iter().enumerate().map(|(n, t)| mu.powi(n as i32) * t[0]).collect())
}

/// Exact Heston mode `exp(A + B x2)` at correlation `rho`.
pub fn heston_mode_exact(kappa: f64, epsilon: f64, rho: f64, varkappa: f64, tau: f64, x2: f64) -> Complex64 {
    let lam = varkappa * varkappa + 0.25;
    let e2 = epsilon * epsilon;
    let b = Complex64::new(kappa - 0.5 * rho * epsilon, -rho * epsilon * varkappa);
    let w = (b * b + e2 * lam).sqrt();
    let xm = w + b;
    let xp = e2 * lam / xm;
    let ex = (-w * tau).exp();
    let ups = xm + xp * ex;
    let a = -(xp * tau + 2.0 * (ups / (2.0 * w)).ln()) * (kappa / e2);
    let bb = -(1.0 - ex) * lam / ups;
    (a + bb * x2).exp()
}

/// `(1/n!) d^n/drho^n` at `rho = 0` of [`heston_mode_exact`], `n = 1..=3`,
/// by central differences with step `h` (eighth order for the first two
/// derivatives, sixth for the third).
pub fn heston_rho_derivatives(kappa: f64, epsilon: f64, varkappa: f64, tau: f64, x2: f64, h: f64) -> [Complex64; 3] {
    let v: Vec<Complex64> = (-4..=4).map(|j| heston_mode_exact(kappa, epsilon, j as f64 * h, varkappa, tau, x2)).collect();
    let odd = |j: usize| v[4 + j] - v[4 - j];
    let even = |j: usize| v[4 + j] + v[4 - j];
    let c1 = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
    let c2 = [8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0];
    let c3 = [-61.0 / 30.0, 169.0 / 120.0, -3.0 / 10.0, 7.0 / 240.0];
    let mut d1 = Complex64::new(0.0, 0.0);
    let mut d2 = v[4] * (-205.0 / 72.0);
    let mut d3 = Complex64::new(0.0, 0.0);
    for j in 0..4 {
        d1 += odd(j + 1) * c1[j];
        d2 += even(j + 1) * c2[j];
        d3 += odd(j + 1) * c3[j];
    }
    [d1 / h, d2 / (2.0 * h * h), d3 / (6.0 * h * h * h)]
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: f64 = 59.758;
    const E: f64 = 23.162;

    /// Riccati system by classical RK4.
    fn riccati(tau: f64, lambda: f64, psi: f64, kappa: f64, eps: f64) -> (f64, f64) {
        let rhs = |b: f64| (kappa * b, 0.5 * eps * eps * b * b - kappa * b - 0.5 * lambda);
        let n = 200_000;
        let h = tau / n as f64;
        let (mut a, mut b) = (0.0, psi);
        for _ in 0..n {
            let (a1, b1) = rhs(b);
            let (a2, b2) = rhs(b + 0.5 * h * b1);
            let (a3, b3) = rhs(b + 0.5 * h * b2);
            let (a4, b4) = rhs(b + h * b3);
            a += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            b += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        }
        (a, b)
    }

    #[test]
    fn affine_matches_riccati_integration() {
        let (a0, b0) = affine_ab(0.0, 3.0, -0.4, 2.0, 1.5).unwrap();
        assert!(a0.abs() < 1e-15 && (b0 + 0.4).abs() < 1e-15);
        for &(tau, lam, psi, k, e) in &[(0.7, 3.0, -0.4, 2.0, 1.5), (0.3, 5.0, -0.2, 1.0, 0.8), (1.0, 10.0, 0.0, K, E)] {
            let (a, b) = affine_ab(tau, lam, psi, k, e).unwrap();
            let (ra, rb) = riccati(tau, lam, psi, k, e);
            assert!((a - ra).abs() < 1e-10 * (1.0 + ra.abs()), "{a} {ra}");
            assert!((b - rb).abs() < 1e-10 * (1.0 + rb.abs()), "{b} {rb}");
        }
        // long-time limit is the stable root of 1/2 e^2 B^2 - k B - 1/2 l = 0
        let (k, e, l) = (2.0, 1.5, 3.0);
        let (_, b) = affine_ab(40.0, l, 0.0, k, e).unwrap();
        let root = (k - (k * k + e * e * l).sqrt()) / (e * e);
        assert!((b - root).abs() < 1e-12);
    }

    #[test]
    fn psi_derivatives_match_finite_differences() {
        let (tau, lam, psi, k, e) = (0.3, 5.0, -0.2, 1.0, 0.8);
        let w = varpi(lam, k, e).unwrap();
        let t = affine_terms(tau, w, psi, k, e);
        let h = 1e-3;
        let g = |p: f64| affine_terms(tau, w, p, k, e);
        let (p2, p1, m1, m2) = (g(psi + 2.0 * h), g(psi + h), g(psi - h), g(psi - 2.0 * h));
        let fd1 = |f: fn(&AffineTerms) -> f64| (-f(&p2) + 8.0 * f(&p1) - 8.0 * f(&m1) + f(&m2)) / (12.0 * h);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        // each derivative against a difference of the one below it
        assert!(rel(t.da[0], fd1(|t| t.a)) < 1e-8);
        assert!(rel(t.db[0], fd1(|t| t.b)) < 1e-8);
        assert!(rel(t.da[1], fd1(|t| t.da[0])) < 1e-8);
        assert!(rel(t.db[1], fd1(|t| t.db[0])) < 1e-8);
        assert!(rel(t.da[2], fd1(|t| t.da[1])) < 1e-8);
        assert!(rel(t.db[2], fd1(|t| t.db[1])) < 1e-8);
        // tau = 0: dB/dpsi = 1, dA/dpsi = 0
        let t0 = affine_terms(0.0, w, psi, k, e);
        assert!(t0.da[0].abs() < 1e-15 && (t0.db[0] - 1.0).abs() < 1e-14);
        // D table against derivatives of exp(A + B x2)
        let x2 = 1.3;
        let d = d_table(&t);
        let ex = |p: &AffineTerms| (p.a + p.b * x2).exp();
        let e0 = ex(&t);
        let poly = |l: usize| (0..=l).rev().fold(0.0, |acc, m| acc * x2 + d[l][m]);
        let f1 = (-ex(&p2) + 8.0 * ex(&p1) - 8.0 * ex(&m1) + ex(&m2)) / (12.0 * h) / e0;
        let f2 = (-ex(&p2) + 16.0 * ex(&p1) - 30.0 * e0 + 16.0 * ex(&m1) - ex(&m2)) / (12.0 * h * h) / e0;
        let f3 = (ex(&p2) - 2.0 * ex(&p1) + 2.0 * ex(&m1) - ex(&m2)) / (2.0 * h * h * h) / e0;
        assert!(rel(poly(1), f1) < 1e-6);
        assert!(rel(poly(2), f2) < 1e-6);
        assert!(rel(poly(3), f3) < 1e-5);
        assert!(d[2][2] >= 0.0);
    }

    #[test]
    fn a_derivative_in_tau_is_kappa_b() {
        let (lam, psi, k, e) = (4.0, -0.3, 1.7, 0.9);
        for &tau in &[0.1, 0.5, 2.0] {
            let h = 1e-5;
            let (ap, _) = affine_ab(tau + h, lam, psi, k, e).unwrap();
            let (am, _) = affine_ab(tau - h, lam, psi, k, e).unwrap();
            let (_, b) = affine_ab(tau, lam, psi, k, e).unwrap();
            assert!(((ap - am) / (2.0 * h) - k * b).abs() < 1e-7 * (k * b).abs());
        }
    }

    #[test]
    fn recurrence_reproduces_explicit_table() {
        // random segments
        let seg = [(0.2, 3.0), (0.35, 7.5), (0.1, 1.2), (0.4, 12.0)];
        let (k, e) = (1.3, 0.7);
        let mut psi = 0.0;
        let mut bs = vec![];
        let mut ds = vec![];
        for &(len, lam) in &seg {
            let w = varpi(lam, k, e).unwrap();
            let t = affine_terms(len, w, psi, k, e);
            ds.push(d_table(&t));
            bs.push(t.b);
            psi = t.b;
        }
        let c0 = [1.0, 0.0, 0.0, 0.0];
        let c1 = c_step(&c0, 1, bs[0], &ds[1]);
        let c2 = c_step(&c1, 2, bs[1], &ds[2]);
        let c3 = c_step(&c2, 3, bs[2], &ds[3]);
        let (b01, b12, b23) = (bs[0], bs[1], bs[2]);
        let (d12, d23, d34) = (&ds[1], &ds[2], &ds[3]);
        let t10 = b01 * d12[1][0];
        let t11 = b01 * d12[1][1];
        assert!((c1[0] - t10).abs() < 1e-13 && (c1[1] - t11).abs() < 1e-13);
        let u = b12 * t10 + t11;
        let t20 = u * d23[1][0] + b12 * t11 * d23[2][0];
        let t21 = u * d23[1][1] + b12 * t11 * d23[2][1];
        let t22 = b12 * t11 * d23[2][2];
        for (a, b) in c2.iter().zip(&[t20, t21, t22]) {
            assert!((a - b).abs() < 1e-13 * (1.0 + b.abs()));
        }
        let p = b23 * t20 + t21;
        let q = b23 * t21 + 2.0 * t22;
        let r = b23 * t22;
        let t3 = [
            p * d34[1][0] + q * d34[2][0] + r * d34[3][0],
            p * d34[1][1] + q * d34[2][1] + r * d34[3][1],
            q * d34[2][2] + r * d34[3][2],
            r * d34[3][3],
        ];
        for (a, b) in c3.iter().zip(&t3) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn simplex_volumes_and_exponential() {
        let r = CubeRule::bode(33);
        assert!((integrate_simplex(|_| 1.0, 1.7, 2, &r) - 1.7f64.powi(2) / 2.0).abs() < 1e-13);
        assert!((integrate_simplex(|_| 1.0, 1.7, 3, &r) - 1.7f64.powi(3) / 6.0).abs() < 1e-13);
        let v = integrate_simplex(|t| (-t[0]).exp(), 1.0, 1, &r);
        assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-8);
        let g = CubeRule::graded_bode(33);
        assert!((integrate_simplex(|_| 1.0, 1.7, 3, &g) - 1.7f64.powi(3) / 6.0).abs() < 1e-7);
    }

    #[test]
    fn expansion_matches_rho_derivatives_for_a_single_mode() {
        let rule = CubeRule::graded_bode(129);
        let (kappa, eps) = (2.0, 0.9);
        for &vk in &[0.5, 2.0] {
            let pred = heston_mode_terms(kappa, eps, vk, 1.0, 0.8, 3, &rule).unwrap();
            let fd = heston_rho_derivatives(kappa, eps, vk, 1.0, 0.8, 0.02);
            let exact0 = heston_mode_exact(kappa, eps, 0.0, vk, 1.0, 0.8);
            assert!((pred[0] - exact0).norm() < 1e-13);
            for n in 1..=3 {
                let err = (pred[n] - fd[n - 1]).norm() / fd[n - 1].norm();
                assert!(err < 1e-6, "vk={vk} n={n} err={err}");
            }
        }
    }
}
