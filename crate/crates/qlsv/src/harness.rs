//! Experiment runner: refinement ladders, cross-method comparisons, slope
//! fits and CSV output.
//!
//! Every experiment evaluates prices on a probe line `x2 = probe_x2` and
//! reports the max-norm error over that line. Ladders use either the finest
//! run of a separate reference resolution or a closed form as "exact".

use crate::analytic::{heston_transformed, rho0_dnt_transformed};
use crate::brownian2d::{
    half_line_survival, quadrant_survival_adi, quadrant_survival_analytic, rectangle_adi, rectangle_expansion, rectangle_galerkin_exact,
    OuterEdge, QuadrantProblem, RectangleProblem,
};
use crate::discretize::{assemble_split, initial_field, Grid1D, Grid2D};
use crate::error::{QlsvError, Result};
use crate::galerkin::GalerkinSystem;
use crate::interp;
use crate::model::{dnt_problem_in_x, transformed_call_problem, MarketParams, NormalizedParams, Payoff, QlsvModel, TransformedProblem};
use crate::montecarlo::{price_dnt_mc, price_dnt_mc_bridged, McConfig, McEstimate};
use crate::rho_expansion::{heston_mode_terms, heston_rho_derivatives, price_expansion, CubeRule};
use crate::steppers::{time_march, Scheme};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Root-mean-square log residual above which a slope fit is flagged.
pub const NOISY_RESIDUAL: f64 = 0.25;

/// Everything an experiment or a single pricing run may need. Missing keys
/// take the reference Heston values and the default resolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub v0: f64,
    /// Any of `gamma`, `theta`, `spot` switches to dimensional input; `tau`
    /// is then in calendar units and rescaled.
    pub gamma: Option<f64>,
    pub theta: Option<f64>,
    pub spot: Option<f64>,
    pub tau: f64,
    pub strike: f64,
    pub x1_min: f64,
    pub x1_max: f64,
    pub x_lower: f64,
    pub x_upper: f64,
    pub x2_max: f64,
    pub i1: usize,
    pub i2: usize,
    pub n: usize,
    pub m: usize,
    pub scheme: String,
    pub varsigma: Option<f64>,
    pub galerkin_varsigma: f64,
    /// defaults to `v0`
    pub probe_x2: Option<f64>,
    pub order: usize,
    pub cube_nodes: usize,
    pub paths: usize,
    pub steps_per_day: usize,
    pub days: f64,
    pub seed: u64,
    pub bm_rho: f64,
    pub l1: f64,
    pub l2: f64,
    pub bm_modes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = NormalizedParams::reference_heston();
        RunConfig {
            alpha: p.alpha,
            beta: p.beta,
            kappa: p.kappa,
            epsilon: p.epsilon,
            rho: p.rho,
            v0: p.v0,
            gamma: None,
            theta: None,
            spot: None,
            tau: 1.0,
            strike: 1.0,
            x1_min: -5.0,
            x1_max: 5.0,
            x_lower: 0.0,
            x_upper: 1.0,
            x2_max: 10.0,
            i1: 201,
            i2: 101,
            n: 1024,
            m: 30,
            scheme: "cs".into(),
            varsigma: None,
            galerkin_varsigma: 1.0,
            probe_x2: None,
            order: 3,
            cube_nodes: 13,
            paths: 200_000,
            steps_per_day: 3,
            days: 365.0,
            seed: 20_240_611,
            bm_rho: -0.9,
            l1: 5.0,
            l2: 4.0,
            bm_modes: 10,
        }
    }
}

fn scalar(raw: &str) -> Value {
    let s = raw.trim().trim_matches('"');
    if let Ok(i) = s.parse::<i64>() {
        Value::from(i)
    } else if let Ok(f) = s.parse::<f64>() {
        Value::from(f)
    } else if s == "null" || s.is_empty() {
        Value::Null
    } else {
        Value::from(s)
    }
}

impl RunConfig {
    /// JSON object or `key = value` lines (`#` starts a comment).
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        let value = if t.starts_with('{') {
            serde_json::from_str::<Value>(t).map_err(|e| QlsvError::Config(e.to_string()))?
        } else {
            let mut map = Map::new();
            for (no, line) in t.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .or_else(|| line.split_once(':'))
                    .ok_or_else(|| QlsvError::Config(format!("line {}: expected key = value", no + 1)))?;
                map.insert(k.trim().to_string(), scalar(v));
            }
            Value::Object(map)
        };
        serde_json::from_value(value).map_err(|e| QlsvError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Apply `key=value` overrides on top of this config.
    pub fn with_overrides(&self, pairs: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(self).map_err(|e| QlsvError::Config(e.to_string()))?;
        let map = v.as_object_mut().expect("config serializes to an object");
        for p in pairs {
            let (k, val) = p.split_once('=').ok_or_else(|| QlsvError::Config(format!("override '{p}' is not key=value")))?;
            map.insert(k.trim().to_string(), scalar(val));
        }
        serde_json::from_value(v).map_err(|e| QlsvError::Config(e.to_string()))
    }

    fn dimensional(&self) -> bool {
        self.gamma.is_some() || self.theta.is_some() || self.spot.is_some()
    }

    /// Model and the non-dimensional maturity.
    pub fn model_and_tau(&self) -> Result<(QlsvModel, f64)> {
        if self.dimensional() {
            let m = MarketParams {
                alpha: self.alpha,
                beta: self.beta,
                gamma: self.gamma.unwrap_or(1.0),
                kappa: self.kappa,
                theta: self.theta.unwrap_or(1.0),
                epsilon: self.epsilon,
                rho: self.rho,
                v0: self.v0,
                spot: self.spot.unwrap_or(1.0),
            };
            let (p, sigma) = crate::model::normalize(&m)?;
            Ok((QlsvModel::new(p)?, self.tau * sigma * sigma))
        } else {
            let p = NormalizedParams { alpha: self.alpha, beta: self.beta, kappa: self.kappa, epsilon: self.epsilon, rho: self.rho, v0: self.v0 };
            Ok((QlsvModel::new(p)?, self.tau))
        }
    }

    pub fn model(&self) -> Result<QlsvModel> {
        Ok(self.model_and_tau()?.0)
    }

    pub fn probe(&self) -> f64 {
        self.probe_x2.unwrap_or(self.v0)
    }

    pub fn scheme(&self) -> Result<Scheme> {
        Scheme::parse(&self.scheme)
    }
}

/// Least-squares slope of `log error` against `log resolution`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Slope {
    Fitted { slope: f64, stderr: f64, residual: f64 },
    /// some error was exactly zero
    Converged,
}

impl Slope {
    pub fn value(&self) -> Option<f64> {
        match self {
            Slope::Fitted { slope, .. } => Some(*slope),
            Slope::Converged => None,
        }
    }

    pub fn noisy(&self) -> bool {
        matches!(self, Slope::Fitted { residual, .. } if *residual > NOISY_RESIDUAL)
    }
}

impl std::fmt::Display for Slope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Slope::Fitted { slope, stderr, residual } => {
                write!(f, "{slope:.3} +- {stderr:.3} (res {residual:.3}{})", if self.noisy() { ", noisy" } else { "" })
            }
            Slope::Converged => write!(f, "converged"),
        }
    }
}

/// Fit `error ~ C h^p`; `resolutions` are the step sizes `h`.
pub fn fit_slope(errors: &[f64], resolutions: &[f64]) -> Result<Slope> {
    if errors.len() != resolutions.len() || errors.len() < 4 {
        return Err(QlsvError::InvalidParameter("slope fit needs at least four matched points".into()));
    }
    if resolutions.iter().any(|&h| !(h > 0.0)) {
        return Err(QlsvError::InvalidParameter("resolutions must be positive".into()));
    }
    if errors.iter().any(|&e| !(e > 0.0)) {
        return Ok(Slope::Converged);
    }
    let n = errors.len() as f64;
    let xs: Vec<f64> = resolutions.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let ss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let stderr = (ss / (n - 2.0) / sxx).sqrt();
    Ok(Slope::Fitted { slope, stderr, residual: (ss / n).sqrt() })
}

/// One CSV row. `stderr` is kept for checks but not written.
#[derive(Clone, Debug, Serialize)]
pub struct ResultRow {
    pub method: String,
    #[serde(rename = "I1")]
    pub i1: usize,
    #[serde(rename = "I2")]
    pub i2: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub value: f64,
    pub error: f64,
    pub seconds: f64,
    #[serde(skip)]
    pub stderr: Option<f64>,
}

impl ResultRow {
    fn new(method: impl Into<String>, res: [usize; 4], value: f64, error: f64, seconds: f64) -> Self {
        ResultRow { method: method.into(), i1: res[0], i2: res[1], n: res[2], m: res[3], value, error, seconds, stderr: None }
    }
}

/// Outcome of one acceptance test applied to a table.
#[derive(Clone, Debug)]
pub struct Check {
    pub label: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(label: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check { label: label.into(), pass, detail: detail.into() }
    }

    fn within(label: &str, value: f64, target: f64, tol: f64) -> Self {
        Check::new(label, (value - target).abs() <= tol, format!("{value:.3} vs {target} +- {tol}"))
    }

    fn below(label: &str, value: f64, bound: f64) -> Self {
        Check::new(label, value <= bound, format!("{value:.3e} <= {bound:.1e}"))
    }
}

#[derive(Clone, Debug)]
pub struct ResultTable {
    pub id: String,
    pub rows: Vec<ResultRow>,
    pub slopes: Vec<(String, Slope)>,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl ResultTable {
    fn new(id: &str) -> Self {
        ResultTable { id: id.into(), rows: Vec::new(), slopes: Vec::new(), checks: Vec::new(), seconds: 0.0 }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Rows as CSV. Without timing the seconds column is zero, which makes
    /// reruns byte-identical.
    pub fn write_csv<W: Write>(&self, w: W, timing: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            let mut r = r.clone();
            if !timing {
                r.seconds = 0.0;
            }
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_slopes<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "slope", "stderr", "residual"])?;
        for (m, s) in &self.slopes {
            let cells = match s {
                Slope::Fitted { slope, stderr, residual } => [m.clone(), slope.to_string(), stderr.to_string(), residual.to_string()],
                Slope::Converged => [m.clone(), "converged".into(), String::new(), String::new()],
            };
            out.write_record(&cells)?;
        }
        out.flush()?;
        Ok(())
    }

    /// `<dir>/<id>.csv`, plus `<id>_slopes.csv` when slopes were fitted.
    pub fn save(&self, dir: &Path, timing: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{}.csv", self.id)))?, timing)?;
        if !self.slopes.is_empty() {
            self.write_slopes(std::fs::File::create(dir.join(format!("{}_slopes.csv", self.id)))?)?;
        }
        Ok(())
    }
}

pub struct ExperimentInfo {
    pub id: &'static str,
    pub criterion: u8,
    pub summary: &'static str,
}

pub const EXPERIMENTS: &[ExperimentInfo] = &[
    ExperimentInfo { id: "call-i1", criterion: 1, summary: "call, all ADI schemes, I1 ladder 51..301, I1=601 as exact" },
    ExperimentInfo { id: "call-i2", criterion: 1, summary: "call, all ADI schemes, I2 ladder 21..161, I2=401 as exact" },
    ExperimentInfo { id: "call-n", criterion: 1, summary: "call, all ADI schemes, N ladder 32..512, N=4096 as exact" },
    ExperimentInfo { id: "call-fourier", criterion: 2, summary: "call, CS-ADI against the Fourier price under joint refinement" },
    ExperimentInfo { id: "dnt-i1", criterion: 3, summary: "double no-touch, all ADI schemes, I1 ladder" },
    ExperimentInfo { id: "dnt-i2", criterion: 3, summary: "double no-touch, all ADI schemes, I2 ladder" },
    ExperimentInfo { id: "dnt-n", criterion: 3, summary: "double no-touch, all ADI schemes, N ladder" },
    ExperimentInfo { id: "dnt-modes", criterion: 3, summary: "double no-touch, Galerkin mode ladder 10..60, M=100 as exact" },
    ExperimentInfo { id: "dnt-rho0", criterion: 4, summary: "double no-touch at zero correlation: eigenseries, Galerkin, expansion" },
    ExperimentInfo { id: "dnt-cross", criterion: 5, summary: "double no-touch: Galerkin, CS-ADI and the correlation expansion" },
    ExperimentInfo { id: "dnt-mc", criterion: 5, summary: "double no-touch: Monte Carlo against Galerkin, discrete and bridged monitoring" },
    ExperimentInfo { id: "rho-derivative", criterion: 6, summary: "Heston mode: expansion terms against finite differences in rho" },
    ExperimentInfo { id: "quadrant", criterion: 7, summary: "quadrant survival, ADI against the Bessel series, two resolutions and both outer closures" },
    ExperimentInfo { id: "quadrant-rho0", criterion: 7, summary: "quadrant survival at zero correlation against the product of half-line survivals" },
    ExperimentInfo { id: "rectangle", criterion: 8, summary: "rectangle survival, CS-ADI against the correlation expansion" },
    ExperimentInfo { id: "rectangle-sweep", criterion: 8, summary: "rectangle survival, expansion error against correlation" },
];

pub fn experiment_ids() -> impl Iterator<Item = &'static str> {
    EXPERIMENTS.iter().map(|e| e.id)
}

/// Run one experiment. `cfg` supplies the model and the base resolutions.
pub fn run_experiment(id: &str, cfg: &RunConfig) -> Result<ResultTable> {
    let t = Instant::now();
    let mut table = match id {
        "call-i1" | "call-i2" | "call-n" | "dnt-i1" | "dnt-i2" | "dnt-n" => adi_ladder(id, cfg)?,
        "call-fourier" => call_vs_fourier(cfg)?,
        "dnt-modes" => galerkin_ladder(cfg)?,
        "dnt-rho0" => rho_zero(cfg)?,
        "dnt-cross" => dnt_comparison(cfg)?,
        "dnt-mc" => dnt_monte_carlo(cfg)?,
        "rho-derivative" => rho_derivatives(cfg)?,
        "quadrant" => quadrant(cfg)?,
        "quadrant-rho0" => quadrant_product(cfg)?,
        "rectangle" => rectangle(cfg)?,
        "rectangle-sweep" => rectangle_sweep(cfg)?,
        _ => return Err(QlsvError::Config(format!("unknown experiment '{id}'"))),
    };
    table.seconds = t.elapsed().as_secs_f64();
    Ok(table)
}

/// `n` equispaced points strictly inside `(a, b)`.
pub fn probe_line(a: f64, b: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|j| a + (b - a) * j as f64 / (n + 1) as f64).collect()
}

/// Price from the transformed solution `u` at `x1`.
pub fn price_from(problem: &TransformedProblem, x1: f64, u: f64) -> f64 {
    let (f, root) = problem.model.inverse(x1);
    match problem.payoff {
        Payoff::CoveredCall { .. } => f - root * u,
        Payoff::DoubleNoTouch => root * u,
    }
}

/// Transformed solution surface on a grid.
pub struct Surface {
    pub grid: Grid2D,
    pub u: Vec<f64>,
}

impl Surface {
    pub fn at(&self, x1: f64, x2: f64) -> f64 {
        interp::cubic2(&self.grid.x1.nodes, &self.grid.x2.nodes, &self.u, x1, x2)
    }
}

/// ADI solve on an `i1 x i2` node grid; returns the surface and the wall
/// time of the time march alone.
pub fn solve_adi(problem: &TransformedProblem, i1: usize, i2: usize, x2_max: f64, tau: f64, n: usize, scheme: Scheme, varsigma: Option<f64>) -> Result<(Surface, f64)> {
    let grid = Grid2D::new(Grid1D::uniform(problem.x_lower, problem.x_upper, i1 - 1)?, Grid1D::sqrt_uniform(x2_max, i2 - 1)?);
    let op = assemble_split(problem, &grid)?;
    let u0 = initial_field(problem, &grid);
    let t = Instant::now();
    let u = time_march(&op, &u0, tau, n, scheme, varsigma)?;
    let secs = t.elapsed().as_secs_f64();
    Ok((Surface { grid, u }, secs))
}

/// Galerkin prices on `line` at variance `x2`.
pub fn solve_galerkin(problem: &TransformedProblem, m: usize, i2: usize, x2_max: f64, tau: f64, n: usize, varsigma: f64, line: &[f64], x2: f64) -> Result<(Vec<f64>, f64)> {
    let sys = GalerkinSystem::new(problem, m)?;
    let grid = Grid1D::sqrt_uniform(x2_max, i2 - 1)?;
    let t = Instant::now();
    let sol = sys.solve(&grid, tau, n, varsigma)?;
    let secs = t.elapsed().as_secs_f64();
    Ok((line.iter().map(|&x| price_from(problem, x, sol.value(x, x2))).collect(), secs))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mid(v: &[f64]) -> f64 {
    v[v.len() / 2]
}

fn call_problem(cfg: &RunConfig, model: &QlsvModel) -> Result<TransformedProblem> {
    transformed_call_problem(model, cfg.strike, cfg.x1_min, cfg.x1_max)
}

fn dnt_problem(cfg: &RunConfig, model: &QlsvModel) -> Result<TransformedProblem> {
    dnt_problem_in_x(model, cfg.x_lower, cfg.x_upper)
}

fn call_line(cfg: &RunConfig) -> Vec<f64> {
    let c = 0.5 * (cfg.x1_min + cfg.x1_max);
    let w = 0.2 * (cfg.x1_max - cfg.x1_min);
    probe_line(c - w, c + w, 39)
}

fn dnt_line(cfg: &RunConfig) -> Vec<f64> {
    // the nodes shared by every ladder grid
    probe_line(cfg.x_lower, cfg.x_upper, 49)
}

fn adi_ladder(id: &str, cfg: &RunConfig) -> Result<ResultTable> {
    let (model, tau) = cfg.model_and_tau()?;
    let call = id.starts_with("fig2");
    let (problem, line) = if call { (call_problem(cfg, &model)?, call_line(cfg)) } else { (dnt_problem(cfg, &model)?, dnt_line(cfg)) };
    let axis = id.as_bytes()[4];
    let (ladder, reference): (Vec<usize>, usize) = match axis {
        b'a' => (vec![51, 101, 151, 201, 301], 601),
        b'b' => (vec![21, 41, 61, 81, 121, 161], 401),
        _ => (vec![32, 64, 128, 256, 512], 4096),
    };
    let res = |r: usize| match axis {
        b'a' => [r, cfg.i2, cfg.n],
        b'b' => [cfg.i1, r, cfg.n],
        _ => [cfg.i1, cfg.i2, r],
    };
    let x2 = cfg.probe();
    let run = |scheme: Scheme, r: [usize; 3]| -> Result<(Vec<f64>, f64)> {
        let (s, secs) = solve_adi(&problem, r[0], r[1], cfg.x2_max, tau, r[2], scheme, None)?;
        Ok((line.iter().map(|&x| price_from(&problem, x, s.at(x, x2))).collect(), secs))
    };
    let mut table = ResultTable::new(id);
    for scheme in Scheme::ADI {
        let (exact, secs) = run(scheme, res(reference))?;
        let rr = res(reference);
        table.rows.push(ResultRow::new(format!("{}-ref", scheme.name()), [rr[0], rr[1], rr[2], 0], mid(&exact), 0.0, secs));
        let mut errs = Vec::new();
        for &l in &ladder {
            let r = res(l);
            let (v, secs) = run(scheme, r)?;
            let e = max_diff(&v, &exact);
            errs.push(e);
            table.rows.push(ResultRow::new(scheme.name(), [r[0], r[1], r[2], 0], mid(&v), e, secs));
        }
        let hs: Vec<f64> = ladder.iter().map(|&l| if axis == b'c' { 1.0 / l as f64 } else { 1.0 / (l - 1) as f64 }).collect();
        let slope = fit_slope(&errs, &hs)?;
        table.slopes.push((scheme.name().to_string(), slope));
        let target = if axis == b'c' && (!call || scheme == Scheme::Douglas) { 1.0 } else { 2.0 };
        let what = match axis {
            b'a' => "I1",
            b'b' => "I2",
            _ => "N",
        };
        let label = format!("{} {what} slope", scheme.name());
        table.checks.push(match slope.value() {
            Some(s) => Check::within(&label, s, target, 0.3),
            None => Check::new(label, false, "errors vanished"),
        });
    }
    Ok(table)
}

fn call_vs_fourier(cfg: &RunConfig) -> Result<ResultTable> {
    let (model, tau) = cfg.model_and_tau()?;
    let problem = call_problem(cfg, &model)?;
    let line = call_line(cfg);
    let x2 = cfg.probe();
    let t = Instant::now();
    let exact: Vec<f64> = line
        .iter()
        .map(|&x| heston_transformed(&model, cfg.strike, tau, x, x2).map(|u| price_from(&problem, x, u)))
        .collect::<Result<_>>()?;
    let mut table = ResultTable::new("call-fourier");
    table.rows.push(ResultRow::new("Fourier", [0; 4], mid(&exact), 0.0, t.elapsed().as_secs_f64()));
    let levels = [(101, 51, 512), (201, 101, 1024), (301, 151, 1536), (401, 201, 2048)];
    let mut errs = Vec::new();
    for &(i1, i2, n) in &levels {
        let (s, secs) = solve_adi(&problem, i1, i2, cfg.x2_max, tau, n, Scheme::CraigSneyd, None)?;
        let v: Vec<f64> = line.iter().map(|&x| price_from(&problem, x, s.at(x, x2))).collect();
        let e = max_diff(&v, &exact);
        errs.push(e);
        table.rows.push(ResultRow::new("CS", [i1, i2, n, 0], mid(&v), e, secs));
    }
    let hs: Vec<f64> = levels.iter().map(|l| 1.0 / (l.0 - 1) as f64).collect();
    table.slopes.push(("CS".into(), fit_slope(&errs, &hs)?));
    let pair = (errs[1] / errs[3]).log2();
    table.checks.push(Check::new("refinement slope 201->401", pair >= 1.7, format!("{pair:.3} >= 1.7")));
    table.checks.push(Check::below("error at 401x201x2048", errs[3], 1e-3));
    Ok(table)
}

fn galerkin_ladder(cfg: &RunConfig) -> Result<ResultTable> {
    let (model, tau) = cfg.model_and_tau()?;
    let problem = dnt_problem(cfg, &model)?;
    let line = dnt_line(cfg);
    let x2 = cfg.probe();
    let ladder = [10usize, 15, 20, 30, 40, 60];
    let g = |m: usize| solve_galerkin(&problem, m, cfg.i2, cfg.x2_max, tau, cfg.n, cfg.galerkin_varsigma, &line, x2);
    let mut table = ResultTable::new("dnt-modes");
    let (exact, secs) = g(100)?;
    table.rows.push(ResultRow::new("Galerkin-ref", [0, cfg.i2, cfg.n, 100], mid(&exact), 0.0, secs));
    let mut errs = Vec::new();
    for &m in &ladder {
        let (v, secs) = g(m)?;
        let e = max_diff(&v, &exact);
        errs.push(e);
        table.rows.push(ResultRow::new("Galerkin", [0, cfg.i2, cfg.n, m], mid(&v), e, secs));
    }
    let hs: Vec<f64> = ladder.iter().map(|&m| 1.0 / m as f64).collect();
    let slope = fit_slope(&errs, &hs)?;
    table.slopes.push(("Galerkin".into(), slope));
    table.checks.push(match slope.value() {
        Some(s) => Check::within("Galerkin mode slope", s, 2.0, 0.4),
        None => Check::new("Galerkin mode slope", false, "errors vanished"),
    });
    Ok(table)
}

fn rho_zero(cfg: &RunConfig) -> Result<ResultTable> {
    let (model, tau) = cfg.model_and_tau()?;
    let model = model.with_rho(0.0)?;
    let problem = dnt_problem(cfg, &model)?;
    let line = dnt_line(cfg);
    let x2 = cfg.probe();
    let m = cfg.m;
    let t = Instant::now();
    let series: Vec<f64> = line
        .iter()
        .map(|&x| rho0_dnt_transformed(&model, cfg.x_lower, cfg.x_upper, tau, x, x2, Some(m)).map(|u| price_from(&problem, x, u)))
        .collect::<Result<_>>()?;
    let s_series = t.elapsed().as_secs_f64();
    // the probe is a node, so no interpolation enters
    let grid = Grid1D::from_nodes(vec![0.0, 0.5 * x2, x2, 1.5 * x2, 2.0 * x2])?;
    let t = Instant::now();
    let sol = GalerkinSystem::new(&problem, m)?.solve(&grid, tau, 1, cfg.galerkin_varsigma)?;
    let galerkin: Vec<f64> = line.iter().map(|&x| price_from(&problem, x, sol.value(x, x2))).collect();
    let s_gal = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let ex = price_expansion(&problem, m, 0, tau, x2, &CubeRule::bode(5))?;
    let expansion: Vec<f64> = line.iter().map(|&x| price_from(&problem, x, ex.value(x, 0))).collect();
    let s_exp = t.elapsed().as_secs_f64();
    let rel = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs())).fold(0.0, f64::max);
    let mut table = ResultTable::new("dnt-rho0");
    table.rows.push(ResultRow::new("series", [0, 0, 0, m], mid(&series), 0.0, s_series));
    table.rows.push(ResultRow::new("Galerkin", [0, 0, 0, m], mid(&galerkin), rel(&galerkin, &series), s_gal));
    table.rows.push(ResultRow::new("expansion-0", [0, 0, 0, m], mid(&expansion), rel(&expansion, &series), s_exp));
    // the stepped modes are reported, not checked: their error is the 1-D solver's
    let t = Instant::now();
    let stepped = GalerkinSystem::new(&problem, m)?.evolve(&Grid1D::sqrt_uniform(cfg.x2_max, cfg.i2 - 1)?, tau, cfg.n, cfg.galerkin_varsigma)?;
    let stepped: Vec<f64> = line.iter().map(|&x| price_from(&problem, x, stepped.value(x, x2))).collect();
    table.rows.push(ResultRow::new("Galerkin-stepped", [0, cfg.i2, cfg.n, m], mid(&stepped), rel(&stepped, &series), t.elapsed().as_secs_f64()));
    for (label, a, b) in [("series-Galerkin", &series, &galerkin), ("series-expansion", &series, &expansion), ("Galerkin-expansion", &galerkin, &expansion)] {
        table.checks.push(Check::below(label, rel(a, b), 1e-6));
    }
    Ok(table)
}

fn dnt_comparison(cfg: &RunConfig) -> Result<ResultTable> {
    let (model, tau) = cfg.model_and_tau()?;
    let problem = dnt_problem(cfg, &model)?;
    let line = dnt_line(cfg);
    let x2 = cfg.probe();
    let adi = |i1: usize, i2: usize, n: usize| -> Result<(Vec<f64>, f64)> {
        let (s, secs) = solve_adi(&problem, i1, i2, cfg.x2_max, tau, n, Scheme::CraigSneyd, None)?;
        Ok((line.iter().map(|&x| price_from(&problem, x, s.at(x, x2))).collect(), secs))
    };
    let mut table = ResultTable::new("dnt-cross");
    let mut gaps = Vec::new();
    let mut gal0 = Vec::new();
    for (k, &(i1, i2, n)) in [(cfg.i1, cfg.i2, cfg.n), (2 * cfg.i1 - 1, 2 * cfg.i2 - 1, 2 * cfg.n)].iter().enumerate() {
        let (g, sg) = solve_galerkin(&problem, cfg.m, i2, cfg.x2_max, tau, n, cfg.galerkin_varsigma, &line, x2)?;
        let (a, sa) = adi(i1, i2, n)?;
        let gap = max_diff(&a, &g);
        gaps.push(gap);
        table.rows.push(ResultRow::new("Galerkin", [0, i2, n, cfg.m], mid(&g), 0.0, sg));
        table.rows.push(ResultRow::new("CS", [i1, i2, n, 0], mid(&a), gap, sa));
        if k == 0 {
            gal0 = g;
        }
    }
    let t = Instant::now();
    let ex = price_expansion(&problem, cfg.m, cfg.order, tau, x2, &CubeRule::graded_bode(cfg.cube_nodes))?;
    let secs = t.elapsed().as_secs_f64();
    let mut exp_err = 0.0;
    for ord in 0..=cfg.order {
        let v: Vec<f64> = line.iter().map(|&x| price_from(&problem, x, ex.value(x, ord))).collect();
        exp_err = max_diff(&v, &gal0);
        table.rows.push(ResultRow::new(format!("expansion-{ord}"), [0, 0, 0, cfg.m], mid(&v), exp_err, secs));
    }
    table.checks.push(Check::below("Galerkin vs CS at defaults", gaps[0], 5e-3));
    table.checks.push(Check::new("gap shrinks under refinement", gaps[1] < gaps[0], format!("{:.3e} -> {:.3e}", gaps[0], gaps[1])));
    table.checks.push(Check::below(&format!("expansion order {} vs Galerkin", cfg.order), exp_err, 5.0 * gaps[0]));
    Ok(table)
}

/// Starting points of the simulation study.
pub fn mc_starts(cfg: &RunConfig) -> Vec<f64> {
    probe_line(cfg.x_lower, cfg.x_upper, 7)
}

fn dnt_monte_carlo(cfg: &RunConfig) -> Result<ResultTable> {
    let (model, tau) = cfg.model_and_tau()?;
    let problem = dnt_problem(cfg, &model)?;
    let starts = mc_starts(cfg);
    let x2 = cfg.probe();
    let (g, _) = solve_galerkin(&problem, cfg.m, cfg.i2, cfg.x2_max, tau, cfg.n, cfg.galerkin_varsigma, &starts, x2)?;
    let mc = McConfig::per_day(cfg.paths, cfg.steps_per_day, cfg.days, cfg.seed);
    let steps = mc.steps(tau);
    let mut table = ResultTable::new("dnt-mc");
    let mut push = |name: &str, est: &[McEstimate], secs: f64| -> Vec<f64> {
        est.iter()
            .zip(&g)
            .map(|(e, &gv)| {
                let mut row = ResultRow::new(name, [0, 0, steps, cfg.paths], e.mean, (e.mean - gv).abs(), secs);
                row.stderr = Some(e.stderr);
                table.rows.push(row);
                e.z_score(gv)
            })
            .collect()
    };
    let t = Instant::now();
    let plain = price_dnt_mc(&model, cfg.x_lower, cfg.x_upper, &starts, x2, tau, &mc)?;
    let z = push("MC", &plain, t.elapsed().as_secs_f64());
    let t = Instant::now();
    let bridged = price_dnt_mc_bridged(&model, cfg.x_lower, cfg.x_upper, &starts, x2, tau, &mc)?;
    let zb = push("MC-bridge", &bridged, t.elapsed().as_secs_f64());
    let worst = |z: &[f64]| z.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let ok = z.iter().filter(|z| z.abs() <= 3.0).count();
    table.checks.push(Check::new("MC within 3 SE of Galerkin", ok == z.len() && ok >= 5, format!("{ok}/{} points, worst |z| {:.1}", z.len(), worst(&z))));
    // diagnostic only: the bridge correction is not part of the stated setup
    table.rows.push(ResultRow::new("MC-bridge-worst-z", [0, 0, steps, cfg.paths], worst(&zb), 0.0, 0.0));
    Ok(table)
}

fn rho_derivatives(cfg: &RunConfig) -> Result<ResultTable> {
    let (model, _) = cfg.model_and_tau()?;
    let (kappa, eps) = (model.params.kappa, model.params.epsilon);
    let rule = CubeRule::graded_bode(129);
    let h = 0.1 / eps;
    let mut table = ResultTable::new("rho-derivative");
    let mut worst = 0.0f64;
    for &vk in &[0.5, 1.0, 3.0] {
        for &tau in &[0.25, 1.0] {
            for &x2 in &[0.5, 2.628] {
                let t = Instant::now();
                let pred = heston_mode_terms(kappa, eps, vk, tau, x2, 3, &rule)?;
                let secs = t.elapsed().as_secs_f64();
                let fd = heston_rho_derivatives(kappa, eps, vk, tau, x2, h);
                for n in 1..=3 {
                    let e = (pred[n] - fd[n - 1]).norm() / fd[n - 1].norm();
                    worst = worst.max(e);
                    table.rows.push(ResultRow::new(format!("order-{n} vk={vk} tau={tau} x2={x2}"), [0, 0, 0, 1], pred[n].norm(), e, secs));
                }
            }
        }
    }
    table.checks.push(Check::below("worst relative mismatch", worst, 1e-5));
    Ok(table)
}

fn quadrant_grid(p: &QuadrantProblem, i1: usize, i2: usize) -> Result<Grid2D> {
    Ok(Grid2D::new(Grid1D::uniform(0.0, p.x1_max, i1 - 1)?, Grid1D::uniform(0.0, p.x2_max, i2 - 1)?))
}

/// Max difference against `exact` on the nodes of the coarse default grid
/// that lie at least a fifth of the box away from the far edges.
fn interior_error(p: &QuadrantProblem, grid: &Grid2D, u: &[f64], exact: &dyn Fn(f64, f64) -> f64) -> f64 {
    let n2 = grid.n2();
    let (s1, s2) = ((grid.n1() - 1) / 50, (grid.n2() - 1) / 25);
    let mut e = 0.0f64;
    for a in (0..grid.n1()).step_by(s1.max(1)) {
        for b in (0..n2).step_by(s2.max(1)) {
            let (x, y) = (grid.x1.nodes[a], grid.x2.nodes[b]);
            if x <= 0.8 * p.x1_max && y <= 0.75 * p.x2_max {
                e = e.max((u[a * n2 + b] - exact(x, y)).abs());
            }
        }
    }
    e
}

fn quadrant(cfg: &RunConfig) -> Result<ResultTable> {
    let p = QuadrantProblem { rho: cfg.bm_rho, tau: cfg.tau, x1_max: cfg.l1, x2_max: cfg.l2 };
    let exact = |x: f64, y: f64| quadrant_survival_analytic(p.rho, p.tau, x, y, 100_001).map(|q| q.value).unwrap_or(f64::NAN);
    let scheme = cfg.scheme()?;
    let mut table = ResultTable::new("quadrant");
    let mut errs = [[0.0; 2]; 2];
    for (k, &(i1, i2, n)) in [(cfg.i1, cfg.i2, 1000), (2 * cfg.i1 - 1, 2 * cfg.i2 - 1, 2000)].iter().enumerate() {
        for (j, outer) in [OuterEdge::Natural, OuterEdge::Dirichlet].into_iter().enumerate() {
            let grid = quadrant_grid(&p, i1, i2)?;
            let t = Instant::now();
            let u = quadrant_survival_adi(&p, &grid, n, scheme, outer)?;
            let secs = t.elapsed().as_secs_f64();
            let e = interior_error(&p, &grid, &u, &exact);
            errs[k][j] = e;
            let name = format!("{}-{}", scheme.name(), if j == 0 { "natural" } else { "dirichlet" });
            let centre = interp::cubic2(&grid.x1.nodes, &grid.x2.nodes, &u, 0.5 * p.x1_max, 0.5 * p.x2_max);
            table.rows.push(ResultRow::new(name, [i1, i2, n, 0], centre, e, secs));
        }
    }
    table.checks.push(Check::below("interior difference at defaults", errs[0][0], 2e-3));
    let ratio = errs[0][0] / errs[1][0];
    table.checks.push(Check::new("difference quarters on doubling", (ratio - 4.0).abs() <= 1.0, format!("ratio {ratio:.2} (4 +- 1)")));
    table.checks.push(Check::new("natural beats Dirichlet", errs[0][0] < errs[0][1], format!("{:.3e} < {:.3e}", errs[0][0], errs[0][1])));
    Ok(table)
}

fn quadrant_product(cfg: &RunConfig) -> Result<ResultTable> {
    let p = QuadrantProblem { rho: 0.0, tau: cfg.tau, x1_max: cfg.l1, x2_max: cfg.l2 };
    let product = |x: f64, y: f64| half_line_survival(p.tau, x) * half_line_survival(p.tau, y);
    let grid = quadrant_grid(&p, cfg.i1, cfg.i2)?;
    let t = Instant::now();
    let u = quadrant_survival_adi(&p, &grid, 1000, cfg.scheme()?, OuterEdge::Natural)?;
    let secs = t.elapsed().as_secs_f64();
    let n2 = grid.n2();
    let mut e_adi = 0.0f64;
    let mut e_series = 0.0f64;
    for a in 0..grid.n1() {
        for b in 0..n2 {
            let (x, y) = (grid.x1.nodes[a], grid.x2.nodes[b]);
            let q = product(x, y);
            e_adi = e_adi.max((u[a * n2 + b] - q).abs());
            if a % 4 == 0 && b % 4 == 0 {
                e_series = e_series.max((quadrant_survival_analytic(0.0, p.tau, x, y, 100_001)?.value - q).abs());
            }
        }
    }
    let mut table = ResultTable::new("quadrant-rho0");
    table.rows.push(ResultRow::new("CS-natural", [cfg.i1, cfg.i2, 1000, 0], product(0.5 * p.x1_max, 0.5 * p.x2_max), e_adi, secs));
    table.rows.push(ResultRow::new("series", [0; 4], product(0.5 * p.x1_max, 0.5 * p.x2_max), e_series, 0.0));
    table.checks.push(Check::below("ADI vs product", e_adi, 1e-4));
    table.checks.push(Check::below("series vs product", e_series, 1e-4));
    Ok(table)
}

fn rectangle(cfg: &RunConfig) -> Result<ResultTable> {
    let p = RectangleProblem { l1: cfg.l1, l2: cfg.l2, rho: cfg.bm_rho, tau: cfg.tau, modes: cfg.bm_modes };
    let grid = Grid2D::new(Grid1D::uniform(0.0, p.l1, cfg.i1 - 1)?, Grid1D::uniform(0.0, p.l2, cfg.i2 - 1)?);
    let t = Instant::now();
    let u = rectangle_adi(&p, &grid, 1000, cfg.scheme()?)?;
    let s_adi = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let ex = rectangle_expansion(&p, 3)?;
    let s_exp = t.elapsed().as_secs_f64();
    let amps = rectangle_galerkin_exact(&p)?;
    let n2 = grid.n2();
    let (c1, c2) = (0.5 * p.l1, 0.5 * p.l2);
    let mut table = ResultTable::new("rectangle");
    table.rows.push(ResultRow::new("CS", [cfg.i1, cfg.i2, 1000, 0], interp::cubic2(&grid.x1.nodes, &grid.x2.nodes, &u, c1, c2), 0.0, s_adi));
    let mut err3 = 0.0;
    for ord in 0..=3 {
        let mut e = 0.0f64;
        for a in 0..grid.n1() {
            for b in 0..n2 {
                e = e.max((u[a * n2 + b] - ex.value(grid.x1.nodes[a], grid.x2.nodes[b], ord)).abs());
            }
        }
        err3 = e;
        table.rows.push(ResultRow::new(format!("expansion-{ord}"), [0, 0, 0, p.modes], ex.value(c1, c2, ord), e, s_exp));
    }
    let mut e_gal = 0.0f64;
    for a in 0..grid.n1() {
        for b in 0..n2 {
            e_gal = e_gal.max((u[a * n2 + b] - crate::brownian2d::rectangle_modes_value(&p, &amps, grid.x1.nodes[a], grid.x2.nodes[b])).abs());
        }
    }
    table.rows.push(ResultRow::new("Galerkin-exact", [0, 0, 0, p.modes], crate::brownian2d::rectangle_modes_value(&p, &amps, c1, c2), e_gal, 0.0));
    table.checks.push(Check::below("CS vs order-3 expansion", err3, 5e-3));
    Ok(table)
}

fn rectangle_sweep(cfg: &RunConfig) -> Result<ResultTable> {
    let base = RectangleProblem { l1: cfg.l1, l2: cfg.l2, rho: cfg.bm_rho, tau: cfg.tau, modes: cfg.bm_modes };
    let t = Instant::now();
    let ex = rectangle_expansion(&base, 3)?;
    let s_exp = t.elapsed().as_secs_f64();
    let rhos: Vec<f64> = (1..=9).map(|j| -0.1 * j as f64).collect();
    let mut table = ResultTable::new("rectangle-sweep");
    let mut errs = vec![Vec::new(); 4];
    for &rho in &rhos {
        let p = RectangleProblem { rho, ..base };
        let amps = rectangle_galerkin_exact(&p)?;
        for (ord, e) in errs.iter_mut().enumerate() {
            let err = ex.l2_error(rho, ord, &amps);
            e.push(err);
            table.rows.push(ResultRow::new(format!("expansion-{ord} rho={rho:.1}"), [0, 0, 0, p.modes], ex.value_with(rho, 0.5 * p.l1, 0.5 * p.l2, ord), err, s_exp));
        }
    }
    let hs: Vec<f64> = rhos.iter().map(|r| r.abs()).collect();
    for (ord, e) in errs.iter().enumerate() {
        let s = fit_slope(e, &hs)?;
        table.slopes.push((format!("expansion-{ord}"), s));
        let label = format!("order {ord} slope");
        table.checks.push(match s.value() {
            Some(v) => Check::within(&label, v, ord as f64 + 1.0, 0.4),
            None => Check::new(label, false, "errors vanished"),
        });
    }
    Ok(table)
}

/// Experiments behind an acceptance criterion.
pub fn criterion_experiments(c: u8) -> Vec<&'static str> {
    EXPERIMENTS.iter().filter(|e| e.criterion == c).map(|e| e.id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let hs = [0.1, 0.05, 0.025, 0.0125];
        let es: Vec<f64> = hs.iter().map(|h| 3.0 * h * h).collect();
        match fit_slope(&es, &hs).unwrap() {
            Slope::Fitted { slope, stderr, residual } => {
                assert!((slope - 2.0).abs() < 1e-12);
                assert!(stderr < 1e-10 && residual < 1e-10);
            }
            s => panic!("{s:?}"),
        }
    }

    #[test]
    fn mixed_orders_lean_to_the_leading_term_on_fine_subsets() {
        let f = |h: f64| h + 0.2 * h * h;
        let coarse = [1.0, 0.5, 0.25, 0.125];
        let fine = [0.01, 0.005, 0.0025, 0.00125];
        let sc = fit_slope(&coarse.map(f), &coarse).unwrap().value().unwrap();
        let sf = fit_slope(&fine.map(f), &fine).unwrap().value().unwrap();
        assert!(sc > 1.0 && sc < 2.0 && sf > 1.0 && sf < sc);
        assert!(sf - 1.0 < 0.01);
    }

    #[test]
    fn noisy_and_degenerate_fits() {
        let hs = [0.1, 0.05, 0.025, 0.0125, 0.00625];
        let es = [1e-3, 5e-6, 2e-3, 1e-7, 3e-4];
        let s = fit_slope(&es, &hs).unwrap();
        assert!(s.noisy(), "{s}");
        assert_eq!(fit_slope(&[1e-3, 0.0, 1e-4, 1e-5], &hs[..4]).unwrap(), Slope::Converged);
        assert!(fit_slope(&[1.0, 2.0, 3.0], &[1.0, 0.5, 0.25]).is_err());
        assert!(fit_slope(&[1.0; 4], &[1.0, 0.0, 0.5, 0.25]).is_err());
    }

    #[test]
    fn config_formats_agree() {
        let kv = "kappa = 2.5\nrho = -0.2 # comment\n\ni1 = 101\nscheme = hv\n";
        let js = r#"{"kappa": 2.5, "rho": -0.2, "i1": 101, "scheme": "hv"}"#;
        let a = RunConfig::parse(kv).unwrap();
        let b = RunConfig::parse(js).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.i1, 101);
        assert_eq!(a.epsilon, NormalizedParams::reference_heston().epsilon);
        assert_eq!(a.scheme().unwrap(), Scheme::HundsdorferVerwer);
        assert!(RunConfig::parse("kapa = 1").is_err());
        assert!(RunConfig::parse("kappa 1").is_err());
        let c = a.with_overrides(&["i2=51".into(), "probe_x2=1.5".into()]).unwrap();
        assert_eq!((c.i2, c.probe()), (51, 1.5));
    }

    #[test]
    fn dimensional_config_rescales_time() {
        let cfg = RunConfig::parse("alpha = 0\nbeta = 0.1\ngamma = 0.1\nkappa = 2\ntheta = 0.04\nepsilon = 0.5\nrho = -0.3\nv0 = 0.05\nspot = 1\ntau = 2").unwrap();
        let (m, tau) = cfg.model_and_tau().unwrap();
        assert!(tau > 0.0 && (tau - 2.0).abs() > 1e-6);
        assert!(m.params.kappa > 0.0);
    }

    #[test]
    fn csv_is_reproducible_without_timing() {
        let cfg = RunConfig { i1: 21, i2: 11, ..RunConfig::default() };
        let a = run_experiment("quadrant-rho0", &cfg).unwrap();
        let b = run_experiment("quadrant-rho0", &cfg).unwrap();
        let (mut wa, mut wb) = (Vec::new(), Vec::new());
        a.write_csv(&mut wa, false).unwrap();
        b.write_csv(&mut wb, false).unwrap();
        assert_eq!(wa, wb);
        let text = String::from_utf8(wa).unwrap();
        assert!(text.starts_with("method,I1,I2,N,M,value,error,seconds\n"));
        assert!(run_experiment("fig99", &cfg).is_err());
    }

    #[test]
    fn every_experiment_maps_to_a_criterion() {
        for e in EXPERIMENTS {
            assert!((1..=8).contains(&e.criterion), "{}", e.id);
        }
        for c in 1..=8 {
            assert!(!criterion_experiments(c).is_empty());
        }
    }
}
