//! Sine-mode reduction in `x1`: the two-factor problem on a barrier interval
//! becomes `M` coupled one-factor problems in the variance.
//!
//! With `U = sum_k U_k(tau, x2) e_k(x1)` each mode obeys
//! `dU_l/dtau = 1/2 eps^2 x2 U_l'' + kappa (1 - x2) U_l' - 1/2 Lambda_l x2 U_l
//!  + rho eps x2 d/dx2 sum_k mu_kl U_k`,
//! where `mu_kl` is the coefficient of `e_l` in `(d/dx1 + btilde) e_k` and
//! `Lambda_k = zeta_k^2 + omega`.

use crate::discretize::{first_derivative, Grid1D, LineOps};
use crate::error::{invalid, Result};
use crate::interp;
use crate::model::{BoundaryKind, Payoff, QlsvModel, TransformedProblem, VolClass};
use crate::quad::integrate_panels;
use crate::rho_expansion::affine_ab;
use nalgebra::DMatrix;
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq)]
pub struct SineBasis {
    pub x_lower: f64,
    pub x_upper: f64,
    pub m: usize,
}

impl SineBasis {
    pub fn new(x_lower: f64, x_upper: f64, m: usize) -> Result<Self> {
        if m == 0 || !(x_lower < x_upper) {
            return invalid("sine basis needs M >= 1 and X_L < X_U");
        }
        Ok(SineBasis { x_lower, x_upper, m })
    }

    pub fn width(&self) -> f64 {
        self.x_upper - self.x_lower
    }

    /// `zeta_k` for the 1-based mode number `k`.
    pub fn zeta(&self, k: usize) -> f64 {
        PI * k as f64 / self.width()
    }

    pub fn eval(&self, k: usize, x: f64) -> f64 {
        (self.zeta(k) * (x - self.x_lower)).sin()
    }

    /// All `M` basis functions at `x` (index 0 is mode 1).
    pub fn eval_all(&self, x: f64) -> Vec<f64> {
        (1..=self.m).map(|k| self.eval(k, x)).collect()
    }

    /// Fourier sine coefficients `(2/Delta) int f e_k`.
    pub fn project(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let panels = (2 * self.m).max(8);
        (1..=self.m)
            .map(|k| 2.0 / self.width() * integrate_panels(|x| f(x) * self.eval(k, x), self.x_lower, self.x_upper, panels, 1e-15, 1e-13))
            .collect()
    }

    /// Coefficient of `e_l` in `e_k'` (0-based matrix indices).
    pub fn derivative_matrix(&self) -> DMatrix<f64> {
        let d = self.width();
        DMatrix::from_fn(self.m, self.m, |i, j| {
            let (k, l) = ((i + 1) as f64, (j + 1) as f64);
            if i == j || (i + j) % 2 == 0 {
                0.0
            } else {
                2.0 * k * l * (-2.0) / ((k * k - l * l) * d)
            }
        })
    }
}

/// Coefficient of `e_l` in `btilde e_k`.
pub fn btilde_matrix(model: &QlsvModel, basis: &SineBasis) -> DMatrix<f64> {
    let m = basis.m;
    match model.class {
        VolClass::Heston | VolClass::DisplacedHeston { .. } => DMatrix::from_diagonal_element(m, m, model.btilde(basis.x_lower)),
        _ => {
            let mut out = DMatrix::zeros(m, m);
            let panels = (2 * m).max(16);
            for i in 0..m {
                for j in i..m {
                    let v = 2.0 / basis.width()
                        * integrate_panels(
                            |x| model.btilde(x) * basis.eval(i + 1, x) * basis.eval(j + 1, x),
                            basis.x_lower,
                            basis.x_upper,
                            panels,
                            1e-14,
                            1e-12,
                        );
                    out[(i, j)] = v;
                    out[(j, i)] = v;
                }
            }
            out
        }
    }
}

/// Closed-form sine coefficients of the double-no-touch payoff. The payoff
/// solves `u'' = omega u`, so two integrations by parts leave boundary terms only.
pub fn dnt_coefficients(model: &QlsvModel, basis: &SineBasis) -> Vec<f64> {
    let (ul, uu) = (model.dnt_payoff(basis.x_lower), model.dnt_payoff(basis.x_upper));
    let w = model.omega();
    (1..=basis.m)
        .map(|k| {
            let z = basis.zeta(k);
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            2.0 / basis.width() * z * (ul + sign * uu) / (z * z + w)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct GalerkinSystem {
    pub basis: SineBasis,
    pub kappa: f64,
    pub epsilon: f64,
    pub rho: f64,
    /// `Lambda_k = zeta_k^2 + omega`
    pub lambda: Vec<f64>,
    /// `mu[(k, l)]`: coefficient of `e_l` in `(d/dx1 + btilde) e_k`
    pub mu: DMatrix<f64>,
    pub nu: Vec<f64>,
}

impl GalerkinSystem {
    /// Needs zero Dirichlet data at both ends of a finite interval.
    pub fn new(problem: &TransformedProblem, m: usize) -> Result<Self> {
        if problem.lower != BoundaryKind::Dirichlet || problem.upper != BoundaryKind::Dirichlet {
            return invalid("the sine basis needs Dirichlet ends");
        }
        if problem.rebate_lower != 0.0 || problem.rebate_upper != 0.0 {
            return invalid("the sine basis needs zero rebates");
        }
        let basis = SineBasis::new(problem.x_lower, problem.x_upper, m)?;
        let model = &problem.model;
        let nu = match problem.payoff {
            Payoff::DoubleNoTouch => dnt_coefficients(model, &basis),
            _ => basis.project(|x| problem.initial(x)),
        };
        let w = model.omega();
        let lambda = (1..=m).map(|k| basis.zeta(k).powi(2) + w).collect();
        let mu = basis.derivative_matrix() + btilde_matrix(model, &basis);
        let p = &model.params;
        Ok(GalerkinSystem { basis, kappa: p.kappa, epsilon: p.epsilon, rho: p.rho, lambda, mu, nu })
    }

    fn mode_operators(&self, grid: &Grid1D) -> LineOps {
        let n = grid.len();
        let m = self.basis.m;
        let x = &grid.nodes;
        let mut ops = LineOps::zeros(n, m, 1, n);
        let e2 = self.epsilon * self.epsilon;
        let a: Vec<f64> = x.iter().map(|&y| e2 * y).collect();
        let b: Vec<f64> = x.iter().map(|&y| self.kappa * (1.0 - y)).collect();
        for l in 0..m {
            let c: Vec<f64> = x.iter().map(|&y| 0.5 * self.lambda[l] * y).collect();
            ops.set_line(l, x, &a, &b, &c, BoundaryKind::Endogenous, BoundaryKind::Endogenous);
        }
        ops
    }

    /// Exact per-mode solution, valid when `rho = 0`.
    pub fn exact_modes(&self, grid: &Grid1D, tau: f64) -> Result<ModeSolution> {
        if self.rho != 0.0 {
            return invalid("exact mode solution needs rho = 0");
        }
        let n = grid.len();
        let mut modes = vec![0.0; self.basis.m * n];
        for k in 0..self.basis.m {
            let (a, b) = affine_ab(tau, self.lambda[k], 0.0, self.kappa, self.epsilon)?;
            for (i, &y) in grid.nodes.iter().enumerate() {
                modes[k * n + i] = self.nu[k] * (a + b * y).exp();
            }
        }
        Ok(ModeSolution { basis: self.basis.clone(), x2: grid.nodes.clone(), tau, modes })
    }

    /// March the coupled system: implicit weight `varsigma` on the mode
    /// operators, coupling source lagged one step.
    pub fn evolve(&self, grid: &Grid1D, tau: f64, steps: usize, varsigma: f64) -> Result<ModeSolution> {
        if steps == 0 || !(tau > 0.0) {
            return invalid("need tau > 0 and at least one step");
        }
        if !(0.0..=1.0).contains(&varsigma) {
            return invalid("varsigma must lie in [0, 1]");
        }
        let n = grid.len();
        let m = self.basis.m;
        let dt = tau / steps as f64;
        let ops = self.mode_operators(grid);
        let solver = ops.implicit(varsigma * dt);
        let deriv = first_derivative(grid);
        let coupling: Vec<Vec<(usize, f64)>> = (0..m)
            .map(|l| (0..m).filter(|&k| self.mu[(k, l)] != 0.0).map(|k| (k, self.mu[(k, l)])).collect())
            .collect();
        let re = self.rho * self.epsilon;
        let mut u = vec![0.0; m * n];
        for k in 0..m {
            u[k * n..(k + 1) * n].iter_mut().for_each(|v| *v = self.nu[k]);
        }
        let mut rhs = vec![0.0; m * n];
        let mut gather = vec![0.0; n];
        let mut dv = vec![0.0; n];
        for _ in 0..steps {
            ops.apply_into(&u, &mut rhs, (1.0 - varsigma) * dt, false);
            for l in 0..m {
                let row = l * n..(l + 1) * n;
                for (r, &v) in rhs[row.clone()].iter_mut().zip(&u[row.clone()]) {
                    *r += v;
                }
                if re == 0.0 {
                    continue;
                }
                gather.iter_mut().for_each(|g| *g = 0.0);
                for &(k, mu) in &coupling[l] {
                    for (g, &v) in gather.iter_mut().zip(&u[k * n..(k + 1) * n]) {
                        *g += mu * v;
                    }
                }
                deriv.apply(&gather, &mut dv);
                for (i, r) in rhs[row].iter_mut().enumerate() {
                    *r += dt * re * grid.nodes[i] * dv[i];
                }
            }
            solver.solve(&mut rhs);
            std::mem::swap(&mut u, &mut rhs);
        }
        Ok(ModeSolution { basis: self.basis.clone(), x2: grid.nodes.clone(), tau, modes: u })
    }

    /// Exact modes at `rho = 0`, time marching otherwise.
    pub fn solve(&self, grid: &Grid1D, tau: f64, steps: usize, varsigma: f64) -> Result<ModeSolution> {
        if self.rho == 0.0 {
            self.exact_modes(grid, tau)
        } else {
            self.evolve(grid, tau, steps, varsigma)
        }
    }
}

/// Mode amplitudes on the variance grid, `modes[k * n2 + i]`.
#[derive(Clone, Debug)]
pub struct ModeSolution {
    pub basis: SineBasis,
    pub x2: Vec<f64>,
    pub tau: f64,
    pub modes: Vec<f64>,
}

impl ModeSolution {
    pub fn amplitudes_at(&self, x2: f64) -> Vec<f64> {
        let n = self.x2.len();
        (0..self.basis.m).map(|k| interp::cubic(&self.x2, &self.modes[k * n..(k + 1) * n], x2)).collect()
    }

    pub fn value(&self, x1: f64, x2: f64) -> f64 {
        let a = self.amplitudes_at(x2);
        self.basis.eval_all(x1).iter().zip(&a).map(|(e, a)| e * a).sum()
    }

    /// Values along `x1s` at fixed `x2`.
    pub fn profile(&self, x1s: &[f64], x2: f64) -> Vec<f64> {
        let a = self.amplitudes_at(x2);
        x1s.iter().map(|&x| self.basis.eval_all(x).iter().zip(&a).map(|(e, a)| e * a).sum()).collect()
    }

    /// Full surface on `x1s` times the variance grid, row-major in `x1`.
    pub fn surface(&self, x1s: &[f64]) -> Vec<f64> {
        let n = self.x2.len();
        let mut out = vec![0.0; x1s.len() * n];
        for (i, &x) in x1s.iter().enumerate() {
            let e = self.basis.eval_all(x);
            for j in 0..n {
                out[i * n + j] = (0..self.basis.m).map(|k| e[k] * self.modes[k * n + j]).sum();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{dnt_problem_in_x, NormalizedParams};

    fn heston(rho: f64) -> QlsvModel {
        let mut p = NormalizedParams::reference_heston();
        p.rho = rho;
        QlsvModel::new(p).unwrap()
    }

    #[test]
    fn derivative_matrix_entries() {
        let b = SineBasis::new(0.0, 1.0, 6).unwrap();
        let d = b.derivative_matrix();
        assert!((d[(0, 1)] - 8.0 / 3.0).abs() < 1e-14);
        for i in 0..6 {
            for j in 0..6 {
                assert!((d[(i, j)] + d[(j, i)]).abs() < 1e-14);
                if (i + j) % 2 == 0 {
                    assert_eq!(d[(i, j)], 0.0);
                }
            }
        }
        // against quadrature of e_k' e_l
        let q = b.project(|x| b.zeta(3) * (b.zeta(3) * x).cos());
        for l in 0..6 {
            assert!((q[l] - d[(2, l)]).abs() < 1e-10, "{l}");
        }
    }

    #[test]
    fn dnt_coefficients_match_quadrature() {
        let model = heston(-0.36);
        let basis = SineBasis::new(0.0, 1.0, 50).unwrap();
        let closed = dnt_coefficients(&model, &basis);
        let quad = basis.project(|x| model.dnt_payoff(x));
        for k in 0..50 {
            assert!((closed[k] - quad[k]).abs() < 1e-10 * closed[k].abs(), "k={k}");
        }
        let e1 = basis.project(|x| basis.eval(1, x));
        assert!((e1[0] - 1.0).abs() < 1e-12 && e1[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rho_zero_march_approaches_exact_modes() {
        let model = heston(0.0);
        let prob = dnt_problem_in_x(&model, 0.0, 1.0).unwrap();
        let sys = GalerkinSystem::new(&prob, 6).unwrap();
        let exact = sys.exact_modes(&Grid1D::sqrt_uniform(10.0, 400).unwrap(), 1.0).unwrap();
        let err = |x2max: f64, i2: usize| {
            let g = Grid1D::sqrt_uniform(x2max, i2).unwrap();
            let num = sys.evolve(&g, 1.0, 2000, 0.5).unwrap();
            (0..6).map(|k| (num.amplitudes_at(2.628)[k] - exact.amplitudes_at(2.628)[k]).abs()).fold(0.0, f64::max)
        };
        // the error is dominated by truncating the variance axis
        let (near, far) = (err(10.0, 100), err(20.0, 100));
        assert!(far < 2e-5 && near > far, "{near} {far}");
    }

    #[test]
    fn reconstruction_vanishes_at_barriers_and_satisfies_parseval() {
        let model = heston(-0.36);
        let prob = dnt_problem_in_x(&model, 0.0, 1.0).unwrap();
        let sys = GalerkinSystem::new(&prob, 8).unwrap();
        let g = Grid1D::sqrt_uniform(10.0, 40).unwrap();
        let sol = sys.evolve(&g, 0.05, 50, 1.0).unwrap();
        assert!(sol.value(0.0, 2.0).abs() < 1e-14 && sol.value(1.0, 2.0).abs() < 1e-12);
        let a = sol.amplitudes_at(2.628);
        let l2 = crate::quad::integrate(|x| sol.value(x, 2.628).powi(2), 0.0, 1.0, 1e-14, 1e-12);
        let parseval = 0.5 * a.iter().map(|v| v * v).sum::<f64>();
        assert!((l2 - parseval).abs() < 1e-10 * parseval);
    }
}
