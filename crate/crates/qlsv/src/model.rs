//! Model parameters, normalization, volatility classes and the Liouville map.
//!
//! After normalization the spot is 1, the long-run variance is 1 and the
//! local volatility reads `sigma(F) = alpha/2 (F-1)^2 + beta (F-1) + 1`.
//! The sign of `omega = (beta^2 - 2 alpha) / 4` together with `alpha`
//! selects one of four classes, each with its own map `X(F)`.

use crate::error::{invalid, QlsvError, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

const CLASS_TOL: f64 = 1e-12;

/// Dimensional inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub theta: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub v0: f64,
    pub spot: f64,
}

/// Non-dimensional parameters (`gamma = theta = spot = 1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub v0: f64,
}

impl NormalizedParams {
    /// The Heston configuration used throughout the experiments.
    pub fn reference_heston() -> Self {
        NormalizedParams { alpha: 0.0, beta: 1.0, kappa: 59.758, epsilon: 23.162, rho: -0.36, v0: 2.628 }
    }
}

/// Rescale dimensional parameters. Returns the normalized set and the
/// volatility scale `Sigma`; time scales with `Sigma^2`.
pub fn normalize(m: &MarketParams) -> Result<(NormalizedParams, f64)> {
    if !(m.spot > 0.0) {
        return invalid("spot must be positive");
    }
    if !(m.theta > 0.0 && m.kappa > 0.0 && m.epsilon > 0.0) {
        return invalid("kappa, theta and epsilon must be positive");
    }
    if !(m.rho > -1.0 && m.rho < 1.0) {
        return invalid("rho must lie in (-1, 1)");
    }
    if !(m.v0 >= 0.0) {
        return invalid("initial variance must be non-negative");
    }
    let f = m.spot;
    let s = 0.5 * m.alpha * f * f + m.beta * f + m.gamma;
    if !(s > 0.0) {
        return invalid("local volatility must be positive at the spot");
    }
    let sigma_scale = m.theta.sqrt() * s / f;
    let np = NormalizedParams {
        alpha: m.alpha * f * f / s,
        beta: (m.alpha * f * f + m.beta * f) / s,
        kappa: m.kappa / (sigma_scale * sigma_scale),
        epsilon: m.epsilon / (m.theta.sqrt() * sigma_scale),
        rho: m.rho,
        v0: m.v0 / m.theta,
    };
    Ok((np, sigma_scale))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VolClass {
    /// `alpha = 0, beta = 1`
    Heston,
    /// `alpha = 0, 0 <= beta < 1`
    DisplacedHeston { beta: f64 },
    /// complex roots, `sigma = alpha/2 ((F-m)^2 + n^2)`
    Imaginary { m: f64, n: f64 },
    /// two negative real roots `p < q < 0`
    Real { p: f64, q: f64 },
}

impl VolClass {
    pub fn name(&self) -> &'static str {
        match self {
            VolClass::Heston => "H",
            VolClass::DisplacedHeston { .. } => "DH",
            VolClass::Imaginary { .. } => "I",
            VolClass::Real { .. } => "R",
        }
    }
}

/// Classify normalized `(alpha, beta)`. Parameters within `1e-12` of a class
/// boundary are rejected.
pub fn classify(alpha: f64, beta: f64) -> Result<VolClass> {
    if !alpha.is_finite() || !beta.is_finite() {
        return invalid("non-finite alpha/beta");
    }
    if alpha == 0.0 {
        if (beta - 1.0).abs() <= CLASS_TOL {
            return Ok(VolClass::Heston);
        }
        if (0.0..1.0).contains(&beta) {
            return Ok(VolClass::DisplacedHeston { beta });
        }
        return Err(QlsvError::UnsupportedClass(format!("alpha = 0 requires 0 <= beta <= 1, got {beta}")));
    }
    if alpha < CLASS_TOL {
        return Err(QlsvError::UnsupportedClass(format!("alpha = {alpha} is negative or degenerate")));
    }
    let disc = beta * beta - 2.0 * alpha;
    if disc.abs() <= CLASS_TOL {
        return Err(QlsvError::UnsupportedClass("omega = 0 is a class boundary".into()));
    }
    if disc < 0.0 {
        let m = (alpha - beta) / alpha;
        let n = (-disc).sqrt() / alpha;
        return Ok(VolClass::Imaginary { m, n });
    }
    let lo = alpha.max((2.0 * alpha).sqrt());
    let hi = 1.0 + 0.5 * alpha;
    if beta > lo + CLASS_TOL && beta < hi - CLASS_TOL {
        let r = disc.sqrt();
        return Ok(VolClass::Real { p: (alpha - beta - r) / alpha, q: (alpha - beta + r) / alpha });
    }
    Err(QlsvError::UnsupportedClass(format!(
        "alpha = {alpha}, beta = {beta}: sigma(F) vanishes on the positive axis or sits on a boundary"
    )))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Endpoint {
    NegInfinity,
    Finite(f64),
    PosInfinity,
}

impl Endpoint {
    pub fn finite(&self) -> Option<f64> {
        match self {
            Endpoint::Finite(x) => Some(*x),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QlsvModel {
    pub params: NormalizedParams,
    pub class: VolClass,
    /// dimensional inputs and volatility scale, when built from them
    pub market: Option<(MarketParams, f64)>,
}

impl QlsvModel {
    pub fn new(params: NormalizedParams) -> Result<Self> {
        if !(params.kappa > 0.0 && params.epsilon > 0.0) {
            return invalid("kappa and epsilon must be positive");
        }
        if !(params.rho > -1.0 && params.rho < 1.0) {
            return invalid("rho must lie in (-1, 1)");
        }
        if !(params.v0 >= 0.0) {
            return invalid("initial variance must be non-negative");
        }
        let class = classify(params.alpha, params.beta)?;
        Ok(QlsvModel { params, class, market: None })
    }

    pub fn from_market(m: &MarketParams) -> Result<Self> {
        let (np, scale) = normalize(m)?;
        let mut model = QlsvModel::new(np)?;
        model.market = Some((*m, scale));
        Ok(model)
    }

    /// Same model with a different correlation.
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        let mut p = self.params;
        p.rho = rho;
        let mut m = QlsvModel::new(p)?;
        m.market = self.market;
        Ok(m)
    }

    pub fn omega(&self) -> f64 {
        let p = &self.params;
        match self.class {
            VolClass::Heston => 0.25,
            _ => 0.25 * (p.beta * p.beta - 2.0 * p.alpha),
        }
    }

    pub fn root_omega(&self) -> f64 {
        self.omega().abs().sqrt()
    }

    pub fn feller_index(&self) -> f64 {
        2.0 * self.params.kappa / (self.params.epsilon * self.params.epsilon) - 1.0
    }

    /// Normalized local volatility.
    pub fn sigma(&self, f: f64) -> f64 {
        let p = &self.params;
        let d = f - 1.0;
        0.5 * p.alpha * d * d + p.beta * d + 1.0
    }

    pub fn domain(&self) -> (Endpoint, Endpoint) {
        match self.class {
            VolClass::Heston => (Endpoint::NegInfinity, Endpoint::PosInfinity),
            VolClass::DisplacedHeston { .. } => (Endpoint::Finite(self.x_zero()), Endpoint::PosInfinity),
            _ => (Endpoint::Finite(self.x_zero()), Endpoint::Finite(self.x_infinity())),
        }
    }

    /// Image of `F = 0` (minus infinity for Heston).
    pub fn x_zero(&self) -> f64 {
        let s = self.root_omega();
        match self.class {
            VolClass::Heston => f64::NEG_INFINITY,
            VolClass::DisplacedHeston { beta } => {
                if beta == 0.0 {
                    -1.0
                } else {
                    (1.0 - beta).ln() / beta
                }
            }
            VolClass::Imaginary { m, n } => (-(m / n).atan() - ((1.0 - m) / n).atan()) / s,
            VolClass::Real { p, q } => ((1.0 - p) * q / ((1.0 - q) * p)).ln() / (2.0 * s),
        }
    }

    /// Image of `F = infinity` (plus infinity for H and DH).
    pub fn x_infinity(&self) -> f64 {
        let s = self.root_omega();
        match self.class {
            VolClass::Heston | VolClass::DisplacedHeston { .. } => f64::INFINITY,
            VolClass::Imaginary { m, n } => (FRAC_PI_2 - ((1.0 - m) / n).atan()) / s,
            VolClass::Real { p, q } => ((1.0 - p) / (1.0 - q)).ln() / (2.0 * s),
        }
    }

    /// Liouville map `X(F)`, with `X(1) = 0`.
    pub fn map(&self, f: f64) -> f64 {
        let s = self.root_omega();
        match self.class {
            VolClass::Heston => f.ln(),
            VolClass::DisplacedHeston { beta } => {
                if beta == 0.0 {
                    f - 1.0
                } else {
                    (beta * (f - 1.0)).ln_1p() / beta
                }
            }
            VolClass::Imaginary { m, n } => (((f - m) / n).atan() - ((1.0 - m) / n).atan()) / s,
            VolClass::Real { p, q } => ((1.0 - p) * (f - q) / ((1.0 - q) * (f - p))).ln() / (2.0 * s),
        }
    }

    /// Inverse map: returns `(F, sqrt(sigma(F)))`.
    pub fn inverse(&self, x: f64) -> (f64, f64) {
        let s = self.root_omega();
        let a2 = (0.5 * self.params.alpha).sqrt();
        match self.class {
            VolClass::Heston => (x.exp(), (0.5 * x).exp()),
            VolClass::DisplacedHeston { beta } => {
                if beta == 0.0 {
                    (1.0 + x, 1.0)
                } else {
                    (1.0 + (beta * x).exp_m1() / beta, (0.5 * beta * x).exp())
                }
            }
            VolClass::Imaginary { m, n } => {
                let (x0, xi) = (self.x_zero(), self.x_infinity());
                let den = (s * (xi - x)).sin();
                ((m * m + n * n).sqrt() * (s * (x - x0)).sin() / den, s / (a2 * den))
            }
            VolClass::Real { p, q } => {
                let (x0, xi) = (self.x_zero(), self.x_infinity());
                let den = (s * (xi - x)).sinh();
                ((p * q).sqrt() * (s * (x - x0)).sinh() / den, s / (a2 * den))
            }
        }
    }

    /// Drift correction multiplying `rho epsilon x2` in the variance drift.
    pub fn btilde(&self, x1: f64) -> f64 {
        let s = self.root_omega();
        match self.class {
            VolClass::Heston => 0.5,
            VolClass::DisplacedHeston { beta } => 0.5 * beta,
            VolClass::Imaginary { .. } => s / (s * (self.x_infinity() - x1)).tan(),
            VolClass::Real { .. } => s / (s * (self.x_infinity() - x1)).tanh(),
        }
    }

    /// Covered-call payoff `min(F, K)` divided by `sqrt(sigma)`.
    pub fn call_payoff(&self, x1: f64, strike: f64) -> f64 {
        let xk = self.map(strike);
        let s = self.root_omega();
        let a2 = (0.5 * self.params.alpha).sqrt();
        let below = x1 < xk;
        match self.class {
            VolClass::Heston => {
                if below {
                    (0.5 * x1).exp()
                } else {
                    strike * (-0.5 * x1).exp()
                }
            }
            VolClass::DisplacedHeston { beta } => {
                if below {
                    if beta < 1e-8 {
                        x1 - self.x_zero()
                    } else {
                        2.0 * (1.0 - beta).sqrt() / beta * (0.5 * beta * (x1 - self.x_zero())).sinh()
                    }
                } else {
                    strike * (-0.5 * beta * x1).exp()
                }
            }
            VolClass::Imaginary { m, n } => {
                if below {
                    a2 * (m * m + n * n).sqrt() / s * (s * (x1 - self.x_zero())).sin()
                } else {
                    a2 * strike / s * (s * (self.x_infinity() - x1)).sin()
                }
            }
            VolClass::Real { p, q } => {
                if below {
                    a2 * (p * q).sqrt() / s * (s * (x1 - self.x_zero())).sinh()
                } else {
                    a2 * strike / s * (s * (self.x_infinity() - x1)).sinh()
                }
            }
        }
    }

    /// Double-no-touch payoff `1 / sqrt(sigma)`.
    pub fn dnt_payoff(&self, x1: f64) -> f64 {
        let s = self.root_omega();
        let a2 = (0.5 * self.params.alpha).sqrt();
        match self.class {
            VolClass::Heston => (-0.5 * x1).exp(),
            VolClass::DisplacedHeston { beta } => (-0.5 * beta * x1).exp(),
            VolClass::Imaginary { .. } => a2 / s * (s * (self.x_infinity() - x1)).sin(),
            VolClass::Real { .. } => a2 / s * (s * (self.x_infinity() - x1)).sinh(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    /// value prescribed (rebate)
    Dirichlet,
    /// PDE applied at the boundary with one-sided stencils
    Endogenous,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Payoff {
    CoveredCall { strike: f64 },
    DoubleNoTouch,
}

/// A pricing problem on `[x_lower, x_upper]` in the Liouville coordinate.
#[derive(Clone, Debug)]
pub struct TransformedProblem {
    pub model: QlsvModel,
    pub payoff: Payoff,
    pub x_lower: f64,
    pub x_upper: f64,
    pub lower: BoundaryKind,
    pub upper: BoundaryKind,
    /// constant rebates paid on Dirichlet ends
    pub rebate_lower: f64,
    pub rebate_upper: f64,
}

impl TransformedProblem {
    /// Initial data in the transformed variable.
    pub fn initial(&self, x1: f64) -> f64 {
        match self.payoff {
            Payoff::CoveredCall { strike } => self.model.call_payoff(x1, strike),
            Payoff::DoubleNoTouch => self.model.dnt_payoff(x1),
        }
    }

    /// Rebate in the transformed variable (`r / sqrt(sigma)`).
    pub fn boundary_value(&self, upper: bool) -> f64 {
        let (x, r) = if upper { (self.x_upper, self.rebate_upper) } else { (self.x_lower, self.rebate_lower) };
        if r == 0.0 {
            0.0
        } else {
            r / self.model.inverse(x).1
        }
    }
}

/// Covered call `min(F, K)`. Finite ends of the Liouville domain carry zero
/// Dirichlet data; infinite ends are truncated at `x1_min` / `x1_max` and
/// closed endogenously.
pub fn transformed_call_problem(model: &QlsvModel, strike: f64, x1_min: f64, x1_max: f64) -> Result<TransformedProblem> {
    if !(strike > 0.0) {
        return invalid("strike must be positive");
    }
    let (lo, hi) = model.domain();
    let (x_lower, lower) = match lo {
        Endpoint::Finite(x) => (x, BoundaryKind::Dirichlet),
        _ => (x1_min, BoundaryKind::Endogenous),
    };
    let (x_upper, upper) = match hi {
        Endpoint::Finite(x) => (x, BoundaryKind::Dirichlet),
        _ => (x1_max, BoundaryKind::Endogenous),
    };
    if !(x_lower < x_upper) {
        return invalid("empty truncated domain");
    }
    let xk = model.map(strike);
    if !(xk > x_lower && xk < x_upper) {
        return invalid("strike outside the computational domain");
    }
    Ok(TransformedProblem {
        model: model.clone(),
        payoff: Payoff::CoveredCall { strike },
        x_lower,
        x_upper,
        lower,
        upper,
        rebate_lower: 0.0,
        rebate_upper: 0.0,
    })
}

/// Double-no-touch with barriers given in `F`.
pub fn transformed_dnt_problem(model: &QlsvModel, f_lower: f64, f_upper: f64) -> Result<TransformedProblem> {
    if !(f_lower > 0.0 && f_lower < f_upper) {
        return invalid("barriers must satisfy 0 < F_L < F_U");
    }
    dnt_problem_in_x(model, model.map(f_lower), model.map(f_upper))
}

/// Double-no-touch with barriers given directly in the Liouville coordinate.
pub fn dnt_problem_in_x(model: &QlsvModel, x_lower: f64, x_upper: f64) -> Result<TransformedProblem> {
    if !(x_lower < x_upper) || !x_lower.is_finite() || !x_upper.is_finite() {
        return invalid("barriers must be finite with X_L < X_U");
    }
    if x_lower < model.x_zero() || x_upper > model.x_infinity() {
        return invalid("barriers outside the Liouville domain");
    }
    Ok(TransformedProblem {
        model: model.clone(),
        payoff: Payoff::DoubleNoTouch,
        x_lower,
        x_upper,
        lower: BoundaryKind::Dirichlet,
        upper: BoundaryKind::Dirichlet,
        rebate_lower: 0.0,
        rebate_upper: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(alpha: f64, beta: f64) -> QlsvModel {
        QlsvModel::new(NormalizedParams { alpha, beta, kappa: 2.0, epsilon: 1.0, rho: -0.3, v0: 1.0 }).unwrap()
    }

    #[test]
    fn normalization_of_the_dimensional_heston_set() {
        let m = MarketParams {
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
            kappa: 2.580,
            theta: 0.043,
            epsilon: 1.0,
            rho: -0.36,
            v0: 0.114,
            spot: 1.0,
        };
        let (np, scale) = normalize(&m).unwrap();
        assert!((scale - 0.043f64.sqrt()).abs() < 1e-15);
        assert!((np.kappa - 60.0).abs() < 1e-12);
        assert!((np.epsilon - 1.0 / 0.043).abs() < 1e-12);
        assert!((np.v0 - 0.114 / 0.043).abs() < 1e-12);
        assert_eq!(np.alpha, 0.0);
        assert_eq!(np.beta, 1.0);
    }

    #[test]
    fn reference_set_has_negative_feller_index() {
        let m = QlsvModel::new(NormalizedParams::reference_heston()).unwrap();
        assert!((m.feller_index() + 0.7772).abs() < 1e-4);
    }

    #[test]
    fn class_examples() {
        match classify(0.5, 0.2).unwrap() {
            VolClass::Imaginary { m, n } => {
                assert!((m - 0.6).abs() < 1e-14);
                assert!((n - 2.0 * 0.24f64.sqrt() / 0.5).abs() < 1e-14);
            }
            c => panic!("{c:?}"),
        }
        let mr = model(1.5, 1.74);
        assert!((mr.omega() - 0.0069).abs() < 1e-14);
        match mr.class {
            VolClass::Real { p, q } => {
                assert!(p < q && q < 0.0);
                assert!(mr.sigma(p).abs() < 1e-13 && mr.sigma(q).abs() < 1e-13);
            }
            c => panic!("{c:?}"),
        }
        assert_eq!(classify(0.0, 1.0).unwrap(), VolClass::Heston);
        assert!(matches!(classify(0.0, 0.4).unwrap(), VolClass::DisplacedHeston { .. }));
    }

    #[test]
    fn boundary_and_invalid_parameters_are_rejected() {
        assert!(classify(0.5, 1.0).is_err()); // beta^2 = 2 alpha
        assert!(classify(0.0, 1.2).is_err());
        assert!(classify(-0.1, 0.5).is_err());
        assert!(classify(1.0, 2.9).is_err()); // roots not both negative
    }

    #[test]
    fn liouville_round_trip_all_classes() {
        for (a, b) in [(0.0, 1.0), (0.0, 0.4), (0.5, 0.2), (1.5, 1.74)] {
            let m = model(a, b);
            assert!(m.map(1.0).abs() < 1e-14);
            for &f in &[0.05, 0.4, 1.0, 2.3, 9.0] {
                let x = m.map(f);
                let (fb, ss) = m.inverse(x);
                assert!((fb / f - 1.0).abs() < 1e-11, "{a} {b} F={f}");
                assert!((ss / m.sigma(f).sqrt() - 1.0).abs() < 1e-11);
                // dX/dF = 1/sigma
                let h = 1e-6 * f;
                let d = (m.map(f + h) - m.map(f - h)) / (2.0 * h);
                assert!((d * m.sigma(f) - 1.0).abs() < 1e-7);
            }
            let (lo, hi) = m.domain();
            if let Endpoint::Finite(x0) = lo {
                assert!((m.map(1e-14) - x0).abs() < 1e-9);
            }
            if let Endpoint::Finite(xi) = hi {
                assert!((m.map(1e9) - xi).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn payoffs_match_generic_definition() {
        for (a, b) in [(0.0, 1.0), (0.0, 0.4), (0.5, 0.2), (1.5, 1.74)] {
            let m = model(a, b);
            for &k in &[0.7, 1.0, 1.4] {
                for &f in &[0.1, 0.69, 0.8, 1.2, 3.0] {
                    let x = m.map(f);
                    let (_, ss) = m.inverse(x);
                    assert!((m.call_payoff(x, k) * ss - f.min(k)).abs() < 1e-11, "{a} {b} {k} {f}");
                    assert!((m.dnt_payoff(x) * ss - 1.0).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn btilde_matches_half_sqrt_sigma_derivative() {
        // btilde = d/dX ln sqrt(sigma(F(X)))
        for (a, b) in [(0.0, 1.0), (0.0, 0.4), (0.5, 0.2), (1.5, 1.74)] {
            let m = model(a, b);
            for &f in &[0.3, 1.0, 2.0] {
                let x = m.map(f);
                let h = 1e-5;
                let d = (m.inverse(x + h).1.ln() - m.inverse(x - h).1.ln()) / (2.0 * h);
                assert!((d - m.btilde(x)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn problems_validate_inputs() {
        let m = model(0.0, 1.0);
        assert!(transformed_dnt_problem(&m, 1.2, 0.8).is_err());
        assert!(transformed_dnt_problem(&m, 0.8, 1.2).is_ok());
        assert!(transformed_call_problem(&m, -1.0, -5.0, 5.0).is_err());
        let mi = model(0.5, 0.2);
        let p = transformed_call_problem(&mi, 1.0, -5.0, 5.0).unwrap();
        assert_eq!(p.lower, BoundaryKind::Dirichlet);
        assert!((p.x_upper - mi.x_infinity()).abs() < 1e-15);
    }
}
