//! Monte Carlo for the normalized Heston model: Andersen's QE variance step
//! with the conditional log-spot update, plus the CIR transition density and
//! the conditional characteristic function of integrated variance.

use crate::error::{invalid, Result};
use crate::model::{QlsvModel, VolClass};
use crate::special::ln_bessel_i_complex;
use crate::special::ln_bessel_i_scaled;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// QE switching level.
pub const PSI_C: f64 = 1.5;

#[derive(Clone, Copy, Debug)]
pub struct McConfig {
    pub n_paths: usize,
    /// time steps per unit of (normalized) time
    pub steps_per_unit: f64,
    pub seed: u64,
    pub antithetic: bool,
}

impl McConfig {
    /// `per_day` steps per day, `days` days per unit of time.
    pub fn per_day(n_paths: usize, per_day: usize, days: f64, seed: u64) -> Self {
        McConfig { n_paths, steps_per_unit: per_day as f64 * days, seed, antithetic: false }
    }

    pub fn steps(&self, tau: f64) -> usize {
        ((self.steps_per_unit * tau).round() as usize).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.n_paths < 2 || !(self.steps_per_unit > 0.0) {
            return invalid("need at least two paths and a positive step rate");
        }
        if self.antithetic && self.n_paths % 2 == 1 {
            return invalid("antithetic sampling needs an even path count");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_samples(xs: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for x in xs {
            n += 1;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        McEstimate { mean, stderr: (var / n as f64).sqrt(), n }
    }

    /// Distance from `x` in standard errors.
    pub fn z_score(&self, x: f64) -> f64 {
        (self.mean - x) / self.stderr
    }
}

/// Exact conditional mean and variance of the normalized CIR variance.
pub fn cir_moments(v: f64, dt: f64, kappa: f64, epsilon: f64) -> (f64, f64) {
    let e = (-kappa * dt).exp();
    let m = 1.0 + (v - 1.0) * e;
    let om = -(-kappa * dt).exp_m1();
    let s2 = epsilon * epsilon / kappa * (v * e * om + 0.5 * om * om);
    (m, s2)
}

/// One QE draw from the variance `v` over `dt`, given a standard normal `z`
/// (quadratic branch) and a uniform `u` (exponential branch).
pub fn qe_variance_step(v: f64, dt: f64, kappa: f64, epsilon: f64, z: f64, u: f64) -> f64 {
    let (m, s2) = cir_moments(v, dt, kappa, epsilon);
    if s2 <= 0.0 {
        return m;
    }
    let psi = s2 / (m * m);
    if psi <= PSI_C {
        let r = 2.0 / psi;
        let b2 = r - 1.0 + (r * (r - 1.0)).sqrt();
        let a = m / (1.0 + b2);
        let w = b2.sqrt() + z;
        a * w * w
    } else {
        let p = (psi - 1.0) / (psi + 1.0);
        if u <= p {
            0.0
        } else {
            let beta = (1.0 - p) / m;
            ((1.0 - p) / (1.0 - u)).ln() / beta
        }
    }
}

/// Log-spot increment over one step given both variance end points; uses
/// the trapezoid for the integrated variance.
#[inline]
pub fn logspot_increment(v: f64, v_next: f64, dt: f64, kappa: f64, epsilon: f64, rho: f64, z: f64) -> f64 {
    let di = 0.5 * (v + v_next) * dt;
    if epsilon == 0.0 {
        return -0.5 * di + di.sqrt() * z;
    }
    let rbar = (1.0 - rho * rho).sqrt();
    rho / epsilon * (v_next - v - kappa * dt) + (rho * kappa / epsilon - 0.5) * di + rbar * di.sqrt() * z
}

/// What a path leaves behind: terminal log-spot increment and its running
/// extremes over the monitoring dates (start included).
#[derive(Clone, Copy, Debug, Default)]
pub struct PathSummary {
    pub x: f64,
    pub min: f64,
    pub max: f64,
    pub v: f64,
}

struct Stepper {
    kappa: f64,
    epsilon: f64,
    rho: f64,
    dt: f64,
}

impl Stepper {
    fn run(&self, v0: f64, steps: usize, rng: &mut ChaCha8Rng, sign: f64, mirror: bool, out: &mut PathSummary) {
        let (mut x, mut v) = (0.0f64, v0);
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for _ in 0..steps {
            let zv: f64 = rng.sample(StandardNormal);
            let uv: f64 = rng.random();
            let zx: f64 = rng.sample(StandardNormal);
            let uv = if mirror { 1.0 - uv } else { uv };
            let vn = qe_variance_step(v, self.dt, self.kappa, self.epsilon, sign * zv, uv);
            x += logspot_increment(v, vn, self.dt, self.kappa, self.epsilon, self.rho, sign * zx);
            v = vn;
            lo = lo.min(x);
            hi = hi.max(x);
        }
        *out = PathSummary { x, min: lo, max: hi, v };
    }
}

/// Simulate `cfg.n_paths` paths from `(x = 0, v0)`. Path `i` draws from its
/// own ChaCha stream, so results do not depend on evaluation order. With
/// antithetic sampling paths `2j` and `2j+1` share a stream with flipped
/// normals and mirrored uniforms.
pub fn simulate(kappa: f64, epsilon: f64, rho: f64, v0: f64, tau: f64, cfg: &McConfig) -> Result<Vec<PathSummary>> {
    cfg.validate()?;
    if !(v0 >= 0.0) || !(tau > 0.0) || !(kappa > 0.0) || !(epsilon >= 0.0) || !(rho.abs() <= 1.0) {
        return invalid("bad Monte Carlo inputs");
    }
    let steps = cfg.steps(tau);
    let st = Stepper { kappa, epsilon, rho, dt: tau / steps as f64 };
    let mut out = vec![PathSummary::default(); cfg.n_paths];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if cfg.antithetic {
        for j in 0..cfg.n_paths / 2 {
            rng.set_stream(j as u64);
            rng.set_word_pos(0);
            st.run(v0, steps, &mut rng, 1.0, false, &mut out[2 * j]);
            rng.set_word_pos(0);
            st.run(v0, steps, &mut rng, -1.0, true, &mut out[2 * j + 1]);
        }
    } else {
        for (i, o) in out.iter_mut().enumerate() {
            rng.set_stream(i as u64);
            rng.set_word_pos(0);
            st.run(v0, steps, &mut rng, 1.0, false, o);
        }
    }
    Ok(out)
}

fn heston_only(model: &QlsvModel) -> Result<()> {
    if model.class != VolClass::Heston {
        return invalid("Monte Carlo covers the Heston class");
    }
    Ok(())
}

/// Estimates over path pairs when antithetic, over paths otherwise.
fn estimate(paths: &[PathSummary], antithetic: bool, f: impl Fn(&PathSummary) -> f64) -> McEstimate {
    if antithetic {
        McEstimate::from_samples(paths.chunks(2).map(|c| 0.5 * (f(&c[0]) + f(&c[1]))))
    } else {
        McEstimate::from_samples(paths.iter().map(f))
    }
}

/// Double-no-touch prices for several start points `x0` (log-spot) between
/// barriers `x_lower < x_upper`, monitored at step ends.
pub fn price_dnt_mc(model: &QlsvModel, x_lower: f64, x_upper: f64, starts: &[f64], v0: f64, tau: f64, cfg: &McConfig) -> Result<Vec<McEstimate>> {
    heston_only(model)?;
    let p = &model.params;
    let paths = simulate(p.kappa, p.epsilon, p.rho, v0, tau, cfg)?;
    Ok(dnt_from_paths(&paths, x_lower, x_upper, starts, cfg.antithetic))
}

/// Survival estimates from precomputed paths.
pub fn dnt_from_paths(paths: &[PathSummary], x_lower: f64, x_upper: f64, starts: &[f64], antithetic: bool) -> Vec<McEstimate> {
    starts
        .iter()
        .map(|&x0| estimate(paths, antithetic, |s| if x0 + s.min > x_lower && x0 + s.max < x_upper { 1.0 } else { 0.0 }))
        .collect()
}

/// Double-no-touch with a Brownian-bridge survival factor per step, which
/// approximates continuous monitoring. The log-spot is treated as Gaussian
/// between monitoring dates with variance `(1 - rho^2) dI`.
pub fn price_dnt_mc_bridged(model: &QlsvModel, x_lower: f64, x_upper: f64, starts: &[f64], v0: f64, tau: f64, cfg: &McConfig) -> Result<Vec<McEstimate>> {
    heston_only(model)?;
    cfg.validate()?;
    let p = model.params;
    let steps = cfg.steps(tau);
    let dt = tau / steps as f64;
    let rbar2 = 1.0 - p.rho * p.rho;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = vec![vec![0.0; cfg.n_paths]; starts.len()];
    let mut x = vec![0.0; starts.len()];
    let mut w = vec![0.0; starts.len()];
    for i in 0..cfg.n_paths {
        rng.set_stream(i as u64);
        rng.set_word_pos(0);
        x.copy_from_slice(starts);
        for (wj, &x0) in w.iter_mut().zip(starts) {
            *wj = if x0 > x_lower && x0 < x_upper { 1.0 } else { 0.0 };
        }
        let mut v = v0;
        for _ in 0..steps {
            let zv: f64 = rng.sample(StandardNormal);
            let uv: f64 = rng.random();
            let zx: f64 = rng.sample(StandardNormal);
            let vn = qe_variance_step(v, dt, p.kappa, p.epsilon, zv, uv);
            let dx = logspot_increment(v, vn, dt, p.kappa, p.epsilon, p.rho, zx);
            let di = rbar2 * 0.5 * (v + vn) * dt;
            for (xj, wj) in x.iter_mut().zip(w.iter_mut()) {
                if *wj == 0.0 {
                    continue;
                }
                let (a, b) = (*xj - x_lower, *xj + dx - x_lower);
                let (c, d) = (x_upper - *xj, x_upper - *xj - dx);
                if b <= 0.0 || d <= 0.0 {
                    *wj = 0.0;
                    continue;
                }
                if di > 0.0 {
                    *wj *= -(-2.0 * a * b / di).exp_m1() * -(-2.0 * c * d / di).exp_m1();
                }
                *xj += dx;
            }
            v = vn;
        }
        for j in 0..starts.len() {
            weights[j][i] = w[j];
        }
    }
    Ok(weights.into_iter().map(McEstimate::from_samples).collect())
}

/// Call on spot `f0`.
pub fn price_call_mc(model: &QlsvModel, strike: f64, tau: f64, f0: f64, v0: f64, cfg: &McConfig) -> Result<McEstimate> {
    heston_only(model)?;
    let p = &model.params;
    let paths = simulate(p.kappa, p.epsilon, p.rho, v0, tau, cfg)?;
    Ok(estimate(&paths, cfg.antithetic, |s| (f0 * s.x.exp() - strike).max(0.0)))
}

/// `E[exp(x_T)]` from `x_0 = 0`; one for a martingale.
pub fn martingale_mc(model: &QlsvModel, tau: f64, v0: f64, cfg: &McConfig) -> Result<McEstimate> {
    heston_only(model)?;
    let p = &model.params;
    let paths = simulate(p.kappa, p.epsilon, p.rho, v0, tau, cfg)?;
    Ok(estimate(&paths, cfg.antithetic, |s| s.x.exp()))
}

/// `kappa / (eps^2 sinh(kappa tau / 2))`.
pub fn psi_kappa(kappa: f64, epsilon: f64, tau: f64) -> f64 {
    kappa / (epsilon * epsilon * (0.5 * kappa * tau).sinh())
}

/// Transition density of the normalized CIR variance from `v_t` to `v_T`
/// over `tau` (a scaled non-central chi-square).
pub fn ncx2_transition_density(v_end: f64, v_start: f64, tau: f64, kappa: f64, epsilon: f64) -> f64 {
    if v_end <= 0.0 {
        return 0.0;
    }
    let e2 = epsilon * epsilon;
    let order = 2.0 * kappa / e2 - 1.0;
    let h = 0.5 * kappa * tau;
    let psi = psi_kappa(kappa, epsilon, tau);
    // c (v_T + v_t e^{-kappa tau}) with c = psi e^{h}
    let c = psi * h.exp();
    let z = 2.0 * psi * (v_start * v_end).sqrt();
    let ln = c.ln() - c * v_end - psi * (-h).exp() * v_start + 0.5 * order * (v_end / v_start).ln() + order * h + ln_bessel_i_scaled(order, z) + z;
    ln.exp()
}

fn ln_p(r: Complex64, tau: f64, vt: f64, vtt: f64, epsilon: f64, order: f64) -> Complex64 {
    let e2 = epsilon * epsilon;
    let sh = (r * (0.5 * tau)).sinh();
    let coth = (r * (0.5 * tau)).cosh() / sh;
    (r / sh).ln() - (vt + vtt) / e2 * r * coth + ln_bessel_i_complex(order, r * (2.0 * (vt * vtt).sqrt() / e2) / sh)
}

/// `E[exp(i l int_t^T v ds) | v_t, v_T]`.
pub fn bk_char_function(l: f64, tau: f64, v_start: f64, v_end: f64, kappa: f64, epsilon: f64) -> Result<Complex64> {
    if !(v_start > 0.0 && v_end > 0.0) {
        return invalid("conditional characteristic function needs positive end points");
    }
    let e2 = epsilon * epsilon;
    let order = 2.0 * kappa / e2 - 1.0;
    let r = (Complex64::new(kappa * kappa, -2.0 * e2 * l)).sqrt();
    let k = Complex64::new(kappa, 0.0);
    Ok((ln_p(r, tau, v_start, v_end, epsilon, order) - ln_p(k, tau, v_start, v_end, epsilon, order)).exp())
}
