//! Survival of two correlated Brownian motions, `dW1 dW2 = rho dt`, in a
//! quadrant and in a rectangle. The quadrant has a Bessel-series solution;
//! the rectangle is solved by a power series in `rho` over a product sine
//! basis. Both serve as oracles for the split-operator solvers.

use crate::discretize::{assemble_split_with, Coefficients, EdgeKinds, Grid2D, SplitOperator};
use crate::error::{invalid, Result};
use crate::model::BoundaryKind;
use crate::special::{ln_bessel_i_scaled, norm_cdf};
use crate::steppers::{time_march, Scheme};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

/// `1/2 U11 + rho U12 + 1/2 U22`.
pub struct BrownianCoefficients {
    pub rho: f64,
}

impl Coefficients for BrownianCoefficients {
    fn a11(&self, _x1: f64, _x2: f64) -> f64 {
        1.0
    }
    fn a12(&self, _x1: f64, _x2: f64) -> f64 {
        self.rho
    }
    fn a22(&self, _x1: f64, _x2: f64) -> f64 {
        1.0
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho.abs() < 1.0) {
        return invalid("|rho| must be below one");
    }
    Ok(())
}

/// Polar coordinates of `(x1, x2)` in the wedge obtained by removing the
/// correlation; the wedge opening is `arccos(-rho)`.
pub fn wedge_coordinates(rho: f64, x1: f64, x2: f64) -> (f64, f64) {
    let z1 = (x1 - rho * x2) / (1.0 - rho * rho).sqrt();
    (z1.hypot(x2), x2.atan2(z1))
}

/// `sqrt(v) e^{-v} (I_{(z-1)/2}(v) + I_{(z+1)/2}(v))`, the radial factor of a
/// wedge mode with angular frequency `z`.
pub fn radial_factor(z: f64, v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let a = ln_bessel_i_scaled(0.5 * (z - 1.0), v);
    let b = ln_bessel_i_scaled(0.5 * (z + 1.0), v);
    v.sqrt() * (a.exp() + b.exp())
}

/// Terms of the wedge series actually summed, for diagnostics.
pub struct QuadrantSeries {
    pub value: f64,
    pub terms: usize,
}

/// Survival probability in the quadrant `x1, x2 > 0` up to `tau`, summed over
/// odd `k` until the terms fade (at most `k_max`).
pub fn quadrant_survival_analytic(rho: f64, tau: f64, x1: f64, x2: f64, k_max: usize) -> Result<QuadrantSeries> {
    check_rho(rho)?;
    if x1 <= 0.0 || x2 <= 0.0 {
        return Ok(QuadrantSeries { value: 0.0, terms: 0 });
    }
    let (r, phi) = wedge_coordinates(rho, x1, x2);
    let open = (-rho).acos();
    let v = r * r / (4.0 * tau);
    let mut s = 0.0;
    let mut quiet = 0;
    let mut used = 0;
    let mut k = 1;
    while k <= k_max {
        let z = PI * k as f64 / open;
        let t = radial_factor(z, v) * (z * phi).sin() / k as f64;
        s += t;
        used = k;
        // terms only start to decay once the Bessel order passes sqrt(v)
        if t.abs() < 1e-16 && z * z > 4.0 * v {
            quiet += 1;
            if quiet >= 5 {
                break;
            }
        } else {
            quiet = 0;
        }
        k += 2;
    }
    Ok(QuadrantSeries { value: (8.0 / PI).sqrt() * s, terms: used })
}

/// One-dimensional survival on the half line, `erf(x / sqrt(2 tau))`.
pub fn half_line_survival(tau: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        2.0 * norm_cdf(x / tau.sqrt()) - 1.0
    }
}

/// One-dimensional survival on `[0, l]` (sine series).
pub fn interval_survival(tau: f64, x: f64, l: f64) -> f64 {
    if x <= 0.0 || x >= l {
        return 0.0;
    }
    let mut s = 0.0;
    let mut k = 1;
    loop {
        let z = PI * k as f64 / l;
        let e = (-0.5 * z * z * tau).exp();
        s += 4.0 / (PI * k as f64) * (z * x).sin() * e;
        if e < 1e-18 || k > 200_001 {
            break;
        }
        k += 2;
    }
    s
}

/// Residual of `v J'' + (2v + 1) J' - z^2 J / (4v)` for the radial factor,
/// by sixth-order central differences; returned relative to `|J| + |v J''|`.
pub fn bessel_identity_residual(z: f64, v: f64) -> f64 {
    let h = 1e-3 * v.max(1e-2).min(1.0);
    let f = |k: i32| radial_factor(z, v + k as f64 * h);
    let d1 = (-f(-3) + 9.0 * f(-2) - 45.0 * f(-1) + 45.0 * f(1) - 9.0 * f(2) + f(3)) / (60.0 * h);
    let d2 = (2.0 * f(-3) - 27.0 * f(-2) + 270.0 * f(-1) - 490.0 * f(0) + 270.0 * f(1) - 27.0 * f(2) + 2.0 * f(3)) / (180.0 * h * h);
    let j = f(0);
    (v * d2 + (2.0 * v + 1.0) * d1 - z * z * j / (4.0 * v)).abs() / (j.abs() + (v * d2).abs() + d1.abs())
}

/// Truncated box `[0, x1_max] x [0, x2_max]` with absorbing inner edges.
#[derive(Clone, Copy, Debug)]
pub struct QuadrantProblem {
    pub rho: f64,
    pub tau: f64,
    pub x1_max: f64,
    pub x2_max: f64,
}

/// How the outer edges of the truncated quadrant are closed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OuterEdge {
    /// one-sided operator rows
    Natural,
    /// survival fixed at one
    Dirichlet,
}

fn brownian_operator(grid: &Grid2D, rho: f64, edges: EdgeKinds) -> SplitOperator {
    assemble_split_with(grid, &BrownianCoefficients { rho }, edges)
}

/// Quadrant survival by ADI on `grid` (which must start at the origin).
pub fn quadrant_survival_adi(problem: &QuadrantProblem, grid: &Grid2D, steps: usize, scheme: Scheme, outer: OuterEdge) -> Result<Vec<f64>> {
    check_rho(problem.rho)?;
    if grid.x1.nodes[0] != 0.0 || grid.x2.nodes[0] != 0.0 {
        return invalid("the quadrant grid must start at the origin");
    }
    let far = match outer {
        OuterEdge::Natural => BoundaryKind::Endogenous,
        OuterEdge::Dirichlet => BoundaryKind::Dirichlet,
    };
    let d = BoundaryKind::Dirichlet;
    let op = brownian_operator(grid, problem.rho, [d, far, d, far]);
    let (n1, n2) = (grid.n1(), grid.n2());
    let mut u0 = vec![1.0; n1 * n2];
    for i1 in 0..n1 {
        u0[i1 * n2] = 0.0;
    }
    u0[..n2].iter_mut().for_each(|v| *v = 0.0);
    time_march(&op, &u0, problem.tau, steps, scheme, None)
}

/// Rectangle `[0, l1] x [0, l2]`, absorbing on all edges.
#[derive(Clone, Copy, Debug)]
pub struct RectangleProblem {
    pub l1: f64,
    pub l2: f64,
    pub rho: f64,
    pub tau: f64,
    /// sine modes per axis
    pub modes: usize,
}

impl RectangleProblem {
    /// `K = (k1 - 1) + (k2 - 1) N` for 1-based mode numbers.
    pub fn flatten(&self, k1: usize, k2: usize) -> usize {
        (k1 - 1) + (k2 - 1) * self.modes
    }

    pub fn unflatten(&self, k: usize) -> (usize, usize) {
        (k % self.modes + 1, k / self.modes + 1)
    }

    fn zetas(&self, k: usize) -> (f64, f64) {
        let (k1, k2) = self.unflatten(k);
        (PI * k1 as f64 / self.l1, PI * k2 as f64 / self.l2)
    }

    pub fn lambda(&self, k: usize) -> f64 {
        let (z1, z2) = self.zetas(k);
        0.5 * (z1 * z1 + z2 * z2)
    }

    /// Sine coefficients of the constant initial data.
    pub fn nu(&self, k: usize) -> f64 {
        let (k1, k2) = self.unflatten(k);
        if k1 % 2 == 1 && k2 % 2 == 1 {
            16.0 / (PI * PI * (k1 * k2) as f64)
        } else {
            0.0
        }
    }

    /// Coefficient of `e_L` in `d^2 e_K / dx1 dx2`.
    pub fn mu(&self, k: usize, l: usize) -> f64 {
        let (k1, k2) = self.unflatten(k);
        let (l1, l2) = self.unflatten(l);
        cos_sine(k1, l1, self.l1) * cos_sine(k2, l2, self.l2)
    }

    fn eval(&self, k: usize, x1: f64, x2: f64) -> f64 {
        let (z1, z2) = self.zetas(k);
        (z1 * x1).sin() * (z2 * x2).sin()
    }

    fn size(&self) -> usize {
        self.modes * self.modes
    }
}

/// Coefficient of `sin(l pi x / L)` in `d/dx sin(k pi x / L)`.
fn cos_sine(k: usize, l: usize, len: f64) -> f64 {
    if (k + l) % 2 == 0 {
        return 0.0;
    }
    let (kf, lf) = (k as f64, l as f64);
    PI * kf / len * 4.0 * lf / (PI * (lf * lf - kf * kf))
}

/// `phi_mu(tau) = int_0^tau exp(-mu s) ds`.
pub fn phi(mu: f64, tau: f64) -> f64 {
    if (mu * tau).abs() < 1e-8 {
        tau * (1.0 - 0.5 * mu * tau)
    } else {
        -(-mu * tau).exp_m1() / mu
    }
}

/// `psi_{a,b}(tau) = int_{0<s1<s2<tau} exp(-a s1 - b s2)`.
pub fn psi(a: f64, b: f64, tau: f64) -> f64 {
    if (a * tau).abs() < 1e-6 {
        // a -> 0: int_0^tau s exp(-b s) ds, corrected to first order in a
        let m0 = moment(b, tau, 1);
        let m1 = moment(b, tau, 2);
        return m0 - 0.5 * a * m1;
    }
    (phi(b, tau) - phi(a + b, tau)) / a
}

/// `int_0^tau s^n exp(-b s) ds` for small `n`.
fn moment(b: f64, tau: f64, n: u32) -> f64 {
    if (b * tau).abs() < 1e-3 {
        let mut s = 0.0;
        let mut c = 1.0;
        for j in 0..12 {
            s += c * tau.powi((n + j + 1) as i32) / (n + j + 1) as f64;
            c *= -b / (j + 1) as f64;
        }
        return s;
    }
    // repeated integration by parts
    let e = (-b * tau).exp();
    let mut acc = phi(b, tau);
    for m in 1..=n {
        acc = (m as f64 * acc - tau.powi(m as i32) * e) / b;
    }
    acc
}

/// Time kernel of a chain of decay rates:
/// `int over 0 < s1 < ... < sn < tau of exp(-l0 s1 - l1 (s2 - s1) - ... - ln (tau - sn))`,
/// i.e. `(-1)^n` times the divided difference of `exp(-l tau)`.
pub fn theta(lambdas: &[f64], tau: f64) -> f64 {
    let mut l = lambdas.to_vec();
    l.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = l.len() - 1;
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    sign * divdiff_exp(&l, tau)
}

/// Divided difference of `exp(-x tau)` on sorted nodes.
fn divdiff_exp(x: &[f64], tau: f64) -> f64 {
    let n = x.len() - 1;
    if n == 0 {
        return (-x[0] * tau).exp();
    }
    let spread = (x[n] - x[0]) * tau;
    if spread < 1.0 {
        return divdiff_taylor(x, tau);
    }
    (divdiff_exp(&x[1..], tau) - divdiff_exp(&x[..n], tau)) / (x[n] - x[0])
}

/// Taylor form about the mean node: `sum_m (-tau)^m / m! h_{m-n}(d)`, with
/// `h_j` the complete homogeneous symmetric polynomials of the offsets.
fn divdiff_taylor(x: &[f64], tau: f64) -> f64 {
    let n = x.len() - 1;
    let c = x.iter().sum::<f64>() / x.len() as f64;
    let d: Vec<f64> = x.iter().map(|v| v - c).collect();
    // h_j for j = 0..J via the recurrence over nodes
    const J: usize = 40;
    let mut h = [0.0f64; J + 1];
    h[0] = 1.0;
    for &di in &d {
        for j in 1..=J {
            h[j] += di * h[j - 1];
        }
    }
    let mut s = 0.0;
    // coefficient (-tau)^m / m!
    let mut coef = 1.0;
    for m in 1..=n {
        coef *= -tau / m as f64;
    }
    for j in 0..=J {
        if j > 0 {
            coef *= -tau / (n + j) as f64;
        }
        let t = coef * h[j];
        s += t;
        if j > 4 && t.abs() < 1e-17 * s.abs() {
            break;
        }
    }
    (-c * tau).exp() * s
}

/// Power-series solution of the rectangle problem in `rho`.
pub struct RectangleExpansion {
    pub problem: RectangleProblem,
    /// `terms[n][K]`: mode amplitudes of the order-`n` correction (without `rho^n`)
    pub terms: Vec<Vec<f64>>,
}

impl RectangleExpansion {
    /// `sum_{n <= order} rho^n Q^(n)` at a point, for a possibly different `rho`.
    pub fn value_with(&self, rho: f64, x1: f64, x2: f64, order: usize) -> f64 {
        let p = &self.problem;
        let mut s = 0.0;
        for (n, t) in self.terms.iter().enumerate().take(order + 1) {
            let r = rho.powi(n as i32);
            for (k, &a) in t.iter().enumerate() {
                if a != 0.0 {
                    s += r * a * p.eval(k, x1, x2);
                }
            }
        }
        s
    }

    /// L2 distance over the rectangle between the order-`order` sum at `rho`
    /// and the mode amplitudes `amps` (Parseval).
    pub fn l2_error(&self, rho: f64, order: usize, amps: &[f64]) -> f64 {
        let scale = 0.25 * self.problem.l1 * self.problem.l2;
        let s: f64 = amps
            .iter()
            .enumerate()
            .map(|(k, &e)| {
                let a: f64 = (0..=order).map(|n| rho.powi(n as i32) * self.terms[n][k]).sum();
                (a - e).powi(2)
            })
            .sum();
        (scale * s).sqrt()
    }

    pub fn value(&self, x1: f64, x2: f64, order: usize) -> f64 {
        self.value_with(self.problem.rho, x1, x2, order)
    }
}

/// Chains `K0 -> K1 -> ... -> Kn` weighted by `nu_K0 mu_{K0 K1} ...`, each
/// multiplied by the time kernel of its decay rates.
pub fn rectangle_expansion(problem: &RectangleProblem, order: usize) -> Result<RectangleExpansion> {
    check_rho(problem.rho)?;
    if problem.modes == 0 || !(problem.l1 > 0.0 && problem.l2 > 0.0) {
        return invalid("rectangle needs positive sides and at least one mode");
    }
    let m = problem.size();
    let lam: Vec<f64> = (0..m).map(|k| problem.lambda(k)).collect();
    let links: Vec<Vec<(usize, f64)>> = (0..m)
        .map(|k| (0..m).filter_map(|l| {
            let v = problem.mu(k, l);
            (v != 0.0).then_some((l, v))
        }).collect())
        .collect();
    let mut terms = vec![vec![0.0; m]; order + 1];
    let mut chain = Vec::with_capacity(order + 1);
    for k0 in 0..m {
        let nu = problem.nu(k0);
        if nu == 0.0 {
            continue;
        }
        chain.clear();
        chain.push(lam[k0]);
        walk(k0, nu, &mut chain, &lam, &links, problem.tau, order, &mut terms);
    }
    Ok(RectangleExpansion { problem: *problem, terms })
}

#[allow(clippy::too_many_arguments)]
fn walk(k: usize, w: f64, chain: &mut Vec<f64>, lam: &[f64], links: &[Vec<(usize, f64)>], tau: f64, order: usize, terms: &mut [Vec<f64>]) {
    let n = chain.len() - 1;
    terms[n][k] += w * theta(chain, tau);
    if n == order {
        return;
    }
    for &(l, mu) in &links[k] {
        let wl = w * mu;
        if wl.abs() < 1e-14 {
            continue;
        }
        chain.push(lam[l]);
        walk(l, wl, chain, lam, links, tau, order, terms);
        chain.pop();
    }
}

/// Mode amplitudes of the full coupled Galerkin system, `exp(tau (rho mu^T - Lambda)) nu`.
pub fn rectangle_galerkin_exact(problem: &RectangleProblem) -> Result<Vec<f64>> {
    check_rho(problem.rho)?;
    let m = problem.size();
    let a = DMatrix::from_fn(m, m, |l, k| problem.rho * problem.mu(k, l) - if k == l { problem.lambda(k) } else { 0.0 });
    let nu = DVector::from_fn(m, |k, _| problem.nu(k));
    Ok(((a * problem.tau).exp() * nu).as_slice().to_vec())
}

/// Evaluate mode amplitudes at a point.
pub fn rectangle_modes_value(problem: &RectangleProblem, amps: &[f64], x1: f64, x2: f64) -> f64 {
    amps.iter().enumerate().map(|(k, a)| a * problem.eval(k, x1, x2)).sum()
}

/// Rectangle survival by ADI on `grid` spanning the rectangle.
pub fn rectangle_adi(problem: &RectangleProblem, grid: &Grid2D, steps: usize, scheme: Scheme) -> Result<Vec<f64>> {
    check_rho(problem.rho)?;
    let (x1, x2) = (&grid.x1.nodes, &grid.x2.nodes);
    if x1[0] != 0.0 || x2[0] != 0.0 || (x1[x1.len() - 1] - problem.l1).abs() > 1e-12 || (x2[x2.len() - 1] - problem.l2).abs() > 1e-12 {
        return invalid("grid must span the rectangle");
    }
    let op = brownian_operator(grid, problem.rho, [BoundaryKind::Dirichlet; 4]);
    let (n1, n2) = (grid.n1(), grid.n2());
    let mut u0 = vec![0.0; n1 * n2];
    for i1 in 1..n1 - 1 {
        for i2 in 1..n2 - 1 {
            u0[i1 * n2 + i2] = 1.0;
        }
    }
    time_march(&op, &u0, problem.tau, steps, scheme, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::Grid1D;
    use crate::special::bessel_i;

    #[test]
    fn uncorrelated_quadrant_factorizes() {
        for &(x1, x2, t) in &[(0.3, 0.7, 1.0), (2.0, 0.1, 0.5), (1.5, 3.0, 2.0), (4.0, 3.5, 1.0)] {
            let q = quadrant_survival_analytic(0.0, t, x1, x2, 20_001).unwrap().value;
            let want = half_line_survival(t, x1) * half_line_survival(t, x2);
            assert!((q - want).abs() < 1e-8, "{x1},{x2}: {q} vs {want}");
        }
    }

    #[test]
    fn quadrant_limits_and_bessel_identities() {
        let far = quadrant_survival_analytic(-0.9, 1.0, 30.0, 30.0, 200_001).unwrap().value;
        assert!((far - 1.0).abs() < 1e-6, "{far}");
        let a = quadrant_survival_analytic(0.5, 1.0, 1e-4, 1.0, 20_001).unwrap().value;
        let b = quadrant_survival_analytic(0.5, 1.0, 2e-4, 1.0, 20_001).unwrap().value;
        assert!((b / a - 2.0).abs() < 1e-2 && a > 0.0);
        let open = (0.9f64).acos();
        for &v in &[0.1, 1.0, 10.0] {
            let r = bessel_identity_residual(PI / open, v);
            assert!(r < 1e-6, "v={v}: {r}");
        }
        for &(nu, v) in &[(0.3, 0.1), (1.7, 4.0), (5.2, 30.0)] {
            let lhs = bessel_i(nu - 1.0, v) - bessel_i(nu + 1.0, v);
            assert!((lhs - 2.0 * nu / v * bessel_i(nu, v)).abs() < 1e-12 * lhs.abs());
        }
    }

    #[test]
    fn quadrant_series_solves_the_pde() {
        let (rho, tau) = (-0.6, 0.8);
        let q = |t: f64, a: f64, b: f64| quadrant_survival_analytic(rho, t, a, b, 100_001).unwrap().value;
        let h = 2e-3;
        for &(a, b) in &[(0.4, 0.9), (1.2, 0.5), (2.0, 2.5)] {
            let qt = (q(tau + h, a, b) - q(tau - h, a, b)) / (2.0 * h);
            let q11 = (q(tau, a + h, b) - 2.0 * q(tau, a, b) + q(tau, a - h, b)) / (h * h);
            let q22 = (q(tau, a, b + h) - 2.0 * q(tau, a, b) + q(tau, a, b - h)) / (h * h);
            let q12 = (q(tau, a + h, b + h) - q(tau, a + h, b - h) - q(tau, a - h, b + h) + q(tau, a - h, b - h)) / (4.0 * h * h);
            let res = qt - (0.5 * q11 + rho * q12 + 0.5 * q22);
            assert!(res.abs() < 1e-5, "({a},{b}): {res}");
        }
    }

    #[test]
    fn kernels_and_confluent_limits() {
        assert_eq!(phi(0.0, 1.7), 1.7);
        let l = 0.8;
        assert!((theta(&[l, l], 1.3) - 1.3 * (-l * 1.3f64).exp()).abs() < 1e-15);
        // psi has a removable singularity at a = 0 and at a + b = 0
        let (b, t) = (0.7, 1.4);
        let lim = psi(0.0, b, t);
        for &a in &[1e-3, 1e-4, 1e-5, 1e-7] {
            let lin = lim - 0.5 * a * moment(b, t, 2);
            assert!((psi(a, b, t) - lin).abs() < a * a * t.powi(4), "{a}");
        }
        assert!((psi(0.0, 0.0, t) - t * t / 2.0).abs() < 1e-12);
        assert!((psi(1.1, 1.1, t) - psi(1.1 + 1e-7, 1.1, t)).abs() < 1e-8);
        // theta against nested quadrature, including near-confluent chains
        for lams in [[0.3, 1.9, 2.0], [1.0, 1.0 + 1e-9, 1.0 - 1e-9], [0.0, 4.0, 12.0], [5.0, 0.1, 5.0]] {
            let tau = 0.9;
            let f = |s2: f64| {
                crate::quad::integrate(|s1| (-lams[0] * s1 - lams[1] * (s2 - s1) - lams[2] * (tau - s2)).exp(), 0.0, s2, 1e-16, 1e-14)
            };
            let want = crate::quad::integrate(f, 0.0, tau, 1e-16, 1e-13);
            assert!((theta(&lams, tau) - want).abs() < 1e-12, "{lams:?}");
            // psi is theta with the last rate factored out
            let via_psi = (-lams[2] * tau).exp() * psi(lams[0] - lams[1], lams[1] - lams[2], tau);
            assert!((via_psi - want).abs() < 1e-10, "{lams:?}");
        }
    }

    #[test]
    fn rectangle_mode_structure() {
        let p = RectangleProblem { l1: 5.0, l2: 4.0, rho: -0.5, tau: 1.0, modes: 6 };
        assert!((p.nu(p.flatten(1, 1)) - 16.0 / (PI * PI)).abs() < 1e-15);
        assert_eq!(p.nu(p.flatten(1, 2)), 0.0);
        for k in 0..36 {
            assert_eq!(p.flatten(p.unflatten(k).0, p.unflatten(k).1), k);
            for l in 0..36 {
                let (a, b) = (p.unflatten(k), p.unflatten(l));
                let odd = (a.0 + b.0) % 2 == 1 && (a.1 + b.1) % 2 == 1;
                assert_eq!(p.mu(k, l) != 0.0, odd);
            }
        }
        // mu against quadrature of the mixed derivative
        let g = |k: usize, l: usize| {
            let (a, b) = (p.unflatten(k), p.unflatten(l));
            let ix = |m: usize, n: usize, len: f64| {
                2.0 / len * crate::quad::integrate(|x| PI * m as f64 / len * (PI * m as f64 * x / len).cos() * (PI * n as f64 * x / len).sin(), 0.0, len, 1e-15, 1e-13)
            };
            ix(a.0, b.0, 5.0) * ix(a.1, b.1, 4.0)
        };
        for (k, l) in [(0, 7), (3, 10), (8, 13)] {
            assert!((p.mu(k, l) - g(k, l)).abs() < 1e-10);
        }
    }

    #[test]
    fn rectangle_expansion_is_the_taylor_series_of_the_galerkin_flow() {
        let base = RectangleProblem { l1: 5.0, l2: 4.0, rho: 0.0, tau: 1.0, modes: 6 };
        let ex = rectangle_expansion(&base, 3).unwrap();
        let (x1, x2) = (1.7, 2.2);
        // order 0 is the separable product of interval series (all modes)
        let q0 = ex.value(x1, x2, 0);
        let exact0 = rectangle_modes_value(&base, &rectangle_galerkin_exact(&base).unwrap(), x1, x2);
        assert!((q0 - exact0).abs() < 1e-13);
        let mut errs = Vec::new();
        for &rho in &[0.05, 0.1] {
            let pr = RectangleProblem { rho, ..base };
            let exact = rectangle_galerkin_exact(&pr).unwrap();
            errs.push(ex.l2_error(rho, 3, &exact));
        }
        let slope = (errs[1] / errs[0]).log2();
        assert!((slope - 4.0).abs() < 0.05, "{errs:?}");
    }

    #[test]
    fn uncorrelated_adi_matches_products() {
        let g = Grid2D::new(Grid1D::uniform(0.0, 5.0, 50).unwrap(), Grid1D::uniform(0.0, 4.0, 40).unwrap());
        let rp = RectangleProblem { l1: 5.0, l2: 4.0, rho: 0.0, tau: 1.0, modes: 1 };
        let u = rectangle_adi(&rp, &g, 200, Scheme::CraigSneyd).unwrap();
        let n2 = g.n2();
        let mut err: f64 = 0.0;
        for i1 in 0..g.n1() {
            for i2 in 0..n2 {
                let (a, b) = (g.x1.nodes[i1], g.x2.nodes[i2]);
                let want = interval_survival(1.0, a, 5.0) * interval_survival(1.0, b, 4.0);
                err = err.max((u[i1 * n2 + i2] - want).abs());
            }
        }
        assert!(err < 5e-3, "{err}");
        assert!(u.iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v)));
    }
}
