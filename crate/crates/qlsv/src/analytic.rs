//! Reference pricers: Black-Scholes, the Fourier integral for the Heston
//! class, and zero-correlation sine-transform / eigenseries pricers for the
//! other classes and for the double-no-touch.

use crate::error::{invalid, QlsvError, Result};
use crate::galerkin::{dnt_coefficients, SineBasis};
use crate::model::{QlsvModel, VolClass};
use crate::quad::integrate_panels;
use crate::rho_expansion::{affine_ab, heston_mode_exact};
use crate::special::norm_cdf;
use std::f64::consts::PI;

/// Undiscounted Black-Scholes call.
pub fn bs_call(f: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    let s = sigma * tau.sqrt();
    if !(s > 0.0) {
        return (f - k).max(0.0);
    }
    let d1 = ((f / k).ln() + 0.5 * s * s) / s;
    f * norm_cdf(d1) - k * norm_cdf(d1 - s)
}

/// Smallest power-of-two cutoff past which `envelope(k) < tol` holds at two
/// consecutive probes.
fn cutoff(mut envelope: impl FnMut(f64) -> f64, tol: f64, limit: f64) -> Result<f64> {
    let mut k = 1.0;
    while k <= limit {
        if envelope(k) < tol && envelope(2.0 * k) < tol {
            return Ok(k);
        }
        k *= 2.0;
    }
    Err(QlsvError::Numerical(format!("transform tail above {tol:e} at k = {limit:e}")))
}

fn panel_count(kmax: f64, freq: f64) -> usize {
    ((kmax * (1.0 + freq) / 2.0).ceil() as usize).clamp(16, 400_000)
}

/// Transformed covered-call value `U(tau, x1, x2)` of the Heston class.
pub fn heston_transformed(model: &QlsvModel, strike: f64, tau: f64, x1: f64, x2: f64) -> Result<f64> {
    if model.class != VolClass::Heston {
        return invalid("the Fourier pricer needs the Heston class");
    }
    let p = &model.params;
    if !(p.rho.abs() < 1.0) {
        return invalid("|rho| must be below one");
    }
    let xk = strike.ln();
    let d = x1 - xk;
    let u = |k: f64| heston_mode_exact(p.kappa, p.epsilon, p.rho, k, tau, x2);
    let kmax = cutoff(|k| u(k).norm() / (k * k + 0.25), 1e-15, 1e8)?;
    let integral = integrate_panels(
        |k| (u(k) * num_complex::Complex64::from_polar(1.0, k * d)).re / (k * k + 0.25),
        0.0,
        kmax,
        panel_count(kmax, d.abs()),
        1e-14,
        1e-13,
    );
    Ok(strike.sqrt() / PI * integral)
}

/// Heston call on spot `f` with variance `x2`.
pub fn heston_call_fourier(model: &QlsvModel, strike: f64, tau: f64, f: f64, x2: f64) -> Result<f64> {
    let x1 = f.ln();
    Ok(f - (0.5 * x1).exp() * heston_transformed(model, strike, tau, x1, x2)?)
}

/// The covered-call payoff split at the strike: values and slopes of the
/// pieces below and above `X_K`, as `(g, g', h, h')`.
fn payoff_pieces(model: &QlsvModel, strike: f64) -> Result<(f64, f64, f64, f64)> {
    let x = model.map(strike);
    let x0 = model.x_zero();
    let s = model.root_omega();
    let a2 = (0.5 * model.params.alpha).sqrt();
    Ok(match model.class {
        VolClass::Heston => {
            let e = (0.5 * x).exp();
            (e, 0.5 * e, strike / e, -0.5 * strike / e)
        }
        VolClass::DisplacedHeston { beta } => {
            if beta < 1e-8 {
                return invalid("the sine transform needs beta > 0");
            }
            let y = 0.5 * beta * (x - x0);
            let r = (1.0 - beta).sqrt();
            let h = strike * (-0.5 * beta * x).exp();
            (2.0 * r / beta * y.sinh(), r * y.cosh(), h, -0.5 * beta * h)
        }
        VolClass::Imaginary { m, n } => {
            let c = a2 * (m * m + n * n).sqrt();
            let (y, z) = (s * (x - x0), s * (model.x_infinity() - x));
            (c / s * y.sin(), c * y.cos(), a2 * strike / s * z.sin(), -a2 * strike * z.cos())
        }
        VolClass::Real { p, q } => {
            let c = a2 * (p * q).sqrt();
            let (y, z) = (s * (x - x0), s * (model.x_infinity() - x));
            (c / s * y.sinh(), c * y.cosh(), a2 * strike / s * z.sinh(), -a2 * strike * z.cosh())
        }
    })
}

/// `int payoff(x) sin(zeta (x - X_0)) dx`, split as the coefficients of
/// `sin(zeta Y)` and `cos(zeta Y)` with `Y = X_K - X_0`. Both pieces solve
/// `u'' = omega u`, so each integral reduces to its values at the strike.
/// The cosine part is `zeta (h - g) / lambda` and vanishes by continuity.
pub fn payoff_sine_parts(model: &QlsvModel, strike: f64, zeta: f64) -> Result<(f64, f64)> {
    let (g, dg, h, dh) = payoff_pieces(model, strike)?;
    let lam = zeta * zeta + model.omega();
    Ok(((dg - dh) / lam, zeta * (h - g) / lam))
}

/// `nu(k) = sqrt(sigma(K)) sin(k Y) / (k^2 + omega)` for the displaced class
/// (sine transform on a half line).
pub fn nu_displaced(model: &QlsvModel, strike: f64, k: f64) -> f64 {
    let y = model.map(strike) - model.x_zero();
    model.sigma(strike).sqrt() * (k * y).sin() / (k * k + model.omega())
}

/// Eigenseries coefficients `nu_k = 2 sqrt(sigma(K)) sin(zeta_k Y) / (Delta Lambda_k)`
/// for the two finite-domain classes, `k = 1..=m`.
pub fn nu_finite(model: &QlsvModel, strike: f64, m: usize) -> Result<Vec<f64>> {
    let basis = finite_basis(model, m)?;
    let y = model.map(strike) - model.x_zero();
    let r = model.sigma(strike).sqrt();
    Ok((1..=m)
        .map(|k| {
            let z = basis.zeta(k);
            2.0 * r * (z * y).sin() / (basis.width() * (z * z + model.omega()))
        })
        .collect())
}

fn finite_basis(model: &QlsvModel, m: usize) -> Result<SineBasis> {
    match model.class {
        VolClass::Imaginary { .. } | VolClass::Real { .. } => SineBasis::new(model.x_zero(), model.x_infinity(), m),
        _ => invalid("eigenseries needs a finite Liouville domain"),
    }
}

fn check_uncorrelated(model: &QlsvModel) -> Result<()> {
    if model.params.rho != 0.0 {
        return invalid("series pricers need rho = 0");
    }
    Ok(())
}

/// Mode factor `exp(A + B x2)` at `rho = 0`.
fn mode_factor(model: &QlsvModel, lambda: f64, tau: f64, x2: f64) -> Result<f64> {
    let (a, b) = affine_ab(tau, lambda, 0.0, model.params.kappa, model.params.epsilon)?;
    Ok((a + b * x2).exp())
}

/// Sums `term(k)` for `k = 1, 2, ...` until ten consecutive terms fall below
/// `1e-12` of the partial sum (or `cap` terms).
fn sum_series(mut term: impl FnMut(usize) -> Result<f64>, cap: usize) -> Result<f64> {
    let mut s = 0.0;
    let mut quiet = 0;
    for k in 1..=cap {
        let t = term(k)?;
        s += t;
        if t.abs() <= 1e-12 * s.abs().max(1e-300) {
            quiet += 1;
            if quiet >= 10 {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    Ok(s)
}

/// Transformed covered-call value at `rho = 0` for the DH, I and R classes.
pub fn rho0_transformed_call(model: &QlsvModel, strike: f64, tau: f64, x1: f64, x2: f64) -> Result<f64> {
    check_uncorrelated(model)?;
    let x0 = model.x_zero();
    match model.class {
        VolClass::DisplacedHeston { .. } => {
            // lambda = k^2 + omega > 0, so the affine factor is always real
            let w = model.omega();
            let f = |k: f64| nu_displaced(model, strike, k) * mode_factor(model, k * k + w, tau, x2).unwrap_or(0.0);
            let r = model.sigma(strike).sqrt();
            let kmax = cutoff(|k| r / (k * k + w) * mode_factor(model, k * k + w, tau, x2).unwrap_or(0.0), 1e-15, 1e8)?;
            let y = x1 - x0;
            let freq = y.abs() + (model.map(strike) - x0).abs();
            Ok(2.0 / PI * integrate_panels(|k| f(k) * (k * y).sin(), 0.0, kmax, panel_count(kmax, freq), 1e-14, 1e-13))
        }
        VolClass::Imaginary { .. } | VolClass::Real { .. } => {
            let basis = finite_basis(model, 1)?;
            let y = model.map(strike) - x0;
            let r = model.sigma(strike).sqrt();
            let delta = basis.width();
            sum_series(
                |k| {
                    let z = PI * k as f64 / delta;
                    let lam = z * z + model.omega();
                    let nu = 2.0 * r * (z * y).sin() / (delta * lam);
                    Ok(nu * mode_factor(model, lam, tau, x2)? * (z * (x1 - x0)).sin())
                },
                200_000,
            )
        }
        VolClass::Heston => heston_transformed(model, strike, tau, x1, x2),
    }
}

/// Call price at `rho = 0` on spot `f`.
pub fn rho0_series_call(model: &QlsvModel, strike: f64, tau: f64, f: f64, x2: f64) -> Result<f64> {
    let x1 = model.map(f);
    Ok(f - model.sigma(f).sqrt() * rho0_transformed_call(model, strike, tau, x1, x2)?)
}

/// Transformed double-no-touch value at `rho = 0` between `X_L` and `X_U`.
/// With `modes = Some(m)` the series stops after `m` terms.
pub fn rho0_dnt_transformed(model: &QlsvModel, x_lower: f64, x_upper: f64, tau: f64, x1: f64, x2: f64, modes: Option<usize>) -> Result<f64> {
    check_uncorrelated(model)?;
    let basis = SineBasis::new(x_lower, x_upper, 1)?;
    let (ul, uu) = (model.dnt_payoff(x_lower), model.dnt_payoff(x_upper));
    let delta = basis.width();
    let term = |k: usize| -> Result<f64> {
        let z = PI * k as f64 / delta;
        let lam = z * z + model.omega();
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        let nu = 2.0 / delta * z * (ul + sign * uu) / lam;
        Ok(nu * mode_factor(model, lam, tau, x2)? * (z * (x1 - x_lower)).sin())
    };
    match modes {
        Some(m) => (1..=m).map(term).sum(),
        None => sum_series(term, 200_000),
    }
}

/// Double-no-touch price at `rho = 0` for barriers `f_lower < f < f_upper`.
pub fn rho0_dnt_series(model: &QlsvModel, f_lower: f64, f_upper: f64, tau: f64, f: f64, x2: f64) -> Result<f64> {
    if !(f_lower < f && f < f_upper) {
        return Ok(0.0);
    }
    let u = rho0_dnt_transformed(model, model.map(f_lower), model.map(f_upper), tau, model.map(f), x2, None)?;
    Ok(model.sigma(f).sqrt() * u)
}

/// Sine coefficients of the double-no-touch payoff with `m` modes.
pub fn dnt_nu(model: &QlsvModel, x_lower: f64, x_upper: f64, m: usize) -> Result<Vec<f64>> {
    Ok(dnt_coefficients(model, &SineBasis::new(x_lower, x_upper, m)?))
}
