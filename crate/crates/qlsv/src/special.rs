//! Special functions: normal CDF and modified Bessel functions of the first
//! kind for real (possibly negative, non-integer) order.

use num_complex::Complex64;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{PI, SQRT_2};

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `ln(exp(-x) I_nu(x))` for `x > 0`, `nu > -1`.
///
/// Power series summed in log space (all terms positive, so no cancellation)
/// for moderate arguments, Hankel asymptotics once `x` dominates `nu^2`.
pub fn ln_bessel_i_scaled(nu: f64, x: f64) -> f64 {
    assert!(nu > -1.0, "order must exceed -1");
    if x <= 0.0 {
        return if nu == 0.0 {
            0.0
        } else if nu > 0.0 {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        };
    }
    if x > 40.0 && x > 2.5 * nu * nu {
        return asymptotic_ln_scaled(nu, x);
    }
    let l2 = 2.0 * (0.5 * x).ln();
    let mut lt = nu * (0.5 * x).ln() - ln_gamma(nu + 1.0);
    let mut m = lt;
    let mut s = 1.0;
    let mut k = 0.0;
    loop {
        lt += l2 - (k + 1.0f64).ln() - (k + 1.0 + nu).ln();
        k += 1.0;
        if lt > m {
            s = s * (m - lt).exp() + 1.0;
            m = lt;
        } else {
            let r = (lt - m).exp();
            s += r;
            if r < 1e-17 && k * (k + nu) > 0.25 * x * x {
                break;
            }
        }
        if k > 1e6 {
            break;
        }
    }
    m + s.ln() - x
}

fn asymptotic_ln_scaled(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..60 {
        let kf = k as f64;
        term *= -(mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * x);
        if term.abs() > prev {
            break;
        }
        sum += term;
        prev = term.abs();
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum.ln() - 0.5 * (2.0 * PI * x).ln()
}

/// `I_nu(x)` for real x >= 0.
pub fn bessel_i(nu: f64, x: f64) -> f64 {
    if x == 0.0 {
        return if nu == 0.0 { 1.0 } else if nu > 0.0 { 0.0 } else { f64::INFINITY };
    }
    (ln_bessel_i_scaled(nu, x) + x).exp()
}

/// `ln I_nu(z)` for complex `z` with `Re z > 0` (principal branch of `z^nu`).
pub fn ln_bessel_i_complex(nu: f64, z: Complex64) -> Complex64 {
    assert!(nu > -1.0, "order must exceed -1");
    if z.norm() > 28.0 + nu * nu {
        let mu = 4.0 * nu * nu;
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = term;
        let mut prev = f64::INFINITY;
        for k in 1..80 {
            let kf = k as f64;
            term *= -(mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0) / z;
            if term.norm() > prev {
                break;
            }
            sum += term;
            prev = term.norm();
            if prev < 1e-17 {
                break;
            }
        }
        return z - 0.5 * (2.0 * PI * z).ln() + sum.ln();
    }
    let w = z * z * 0.25;
    let mut c = Complex64::new((-ln_gamma(nu + 1.0)).exp(), 0.0);
    let mut s = c;
    let mut k = 0.0;
    loop {
        c *= w / ((k + 1.0) * (k + 1.0 + nu));
        k += 1.0;
        s += c;
        if c.norm() < 1e-17 * s.norm() && k > w.norm().sqrt() {
            break;
        }
        if k > 5000.0 {
            break;
        }
    }
    nu * (z * 0.5).ln() + s.ln()
}
