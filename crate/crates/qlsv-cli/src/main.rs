use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qlsv::brownian2d::{quadrant_survival_adi, quadrant_survival_analytic, rectangle_adi, rectangle_expansion, OuterEdge, QuadrantProblem, RectangleProblem};
use qlsv::discretize::{Grid1D, Grid2D};
use qlsv::harness::{self, price_from, solve_adi, solve_galerkin, RunConfig, EXPERIMENTS};
use qlsv::model::{dnt_problem_in_x, transformed_call_problem};
use qlsv::rho_expansion::{price_expansion, CubeRule};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "qlsv", about = "Quadratic local stochastic volatility pricing and benchmarks")]
struct Cli {
    /// config file (JSON or key = value lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// key=value overrides applied after the config file
    #[arg(long = "set", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Call price on the probe variance over a spot line
    PriceCall(Line),
    /// Double no-touch price by ADI, Galerkin or the correlation expansion
    PriceDnt {
        #[command(flatten)]
        line: Line,
        #[arg(long, default_value = "galerkin")]
        method: String,
    },
    /// Quadrant survival, ADI against the series
    Quadrant(Line),
    /// Rectangle survival, ADI against the expansion
    Rectangle(Line),
    /// Run a named experiment
    Bench {
        #[arg(long)]
        experiment: Option<String>,
        /// enumerate experiments and their criteria
        #[arg(long)]
        list: bool,
        /// output directory for CSV files
        #[arg(long)]
        out: Option<PathBuf>,
        /// exit nonzero if a tolerance is breached
        #[arg(long)]
        check: bool,
        /// write zeros in the seconds column
        #[arg(long)]
        no_timing: bool,
    },
}

#[derive(Args)]
struct Line {
    /// points on the line
    #[arg(long, default_value_t = 11)]
    points: usize,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let base = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    let cfg = base.with_overrides(&cli.set)?;
    match cli.cmd {
        Cmd::PriceCall(line) => price_call(&cfg, line.points),
        Cmd::PriceDnt { line, method } => price_dnt(&cfg, line.points, &method),
        Cmd::Quadrant(line) => quadrant(&cfg, line.points),
        Cmd::Rectangle(line) => rectangle(&cfg, line.points),
        Cmd::Bench { experiment, list, out, check, no_timing } => bench(&cfg, experiment, list, out, check, !no_timing),
    }
}

fn price_call(cfg: &RunConfig, points: usize) -> Result<()> {
    let (model, tau) = cfg.model_and_tau()?;
    let p = transformed_call_problem(&model, cfg.strike, cfg.x1_min, cfg.x1_max)?;
    let (s, secs) = solve_adi(&p, cfg.i1, cfg.i2, cfg.x2_max, tau, cfg.n, cfg.scheme()?, cfg.varsigma)?;
    println!("x1,spot,price");
    let w = 0.2 * (cfg.x1_max - cfg.x1_min);
    let c = 0.5 * (cfg.x1_max + cfg.x1_min);
    for x in harness::probe_line(c - w, c + w, points) {
        println!("{x},{},{}", model.inverse(x).0, price_from(&p, x, s.at(x, cfg.probe())));
    }
    eprintln!("solve {secs:.2}s");
    Ok(())
}

fn price_dnt(cfg: &RunConfig, points: usize, method: &str) -> Result<()> {
    let (model, tau) = cfg.model_and_tau()?;
    let p = dnt_problem_in_x(&model, cfg.x_lower, cfg.x_upper)?;
    let line = harness::probe_line(cfg.x_lower, cfg.x_upper, points);
    let x2 = cfg.probe();
    let values: Vec<f64> = match method {
        "adi" => {
            let (s, _) = solve_adi(&p, cfg.i1, cfg.i2, cfg.x2_max, tau, cfg.n, cfg.scheme()?, cfg.varsigma)?;
            line.iter().map(|&x| price_from(&p, x, s.at(x, x2))).collect()
        }
        "galerkin" => solve_galerkin(&p, cfg.m, cfg.i2, cfg.x2_max, tau, cfg.n, cfg.galerkin_varsigma, &line, x2)?.0,
        "expansion" => {
            let ex = price_expansion(&p, cfg.m, cfg.order, tau, x2, &CubeRule::graded_bode(cfg.cube_nodes))?;
            line.iter().map(|&x| price_from(&p, x, ex.value(x, cfg.order))).collect()
        }
        _ => bail!("method must be adi, galerkin or expansion"),
    };
    println!("x1,spot,price");
    for (x, v) in line.iter().zip(values) {
        println!("{x},{},{v}", model.inverse(*x).0);
    }
    Ok(())
}

fn quadrant(cfg: &RunConfig, points: usize) -> Result<()> {
    let p = QuadrantProblem { rho: cfg.bm_rho, tau: cfg.tau, x1_max: cfg.l1, x2_max: cfg.l2 };
    let grid = Grid2D::new(Grid1D::uniform(0.0, p.x1_max, cfg.i1 - 1)?, Grid1D::uniform(0.0, p.x2_max, cfg.i2 - 1)?);
    let u = quadrant_survival_adi(&p, &grid, cfg.n, cfg.scheme()?, OuterEdge::Natural)?;
    let y = 0.5 * p.x2_max;
    println!("x1,x2,adi,series");
    for x in harness::probe_line(0.0, p.x1_max, points) {
        let a = qlsv::interp::cubic2(&grid.x1.nodes, &grid.x2.nodes, &u, x, y);
        println!("{x},{y},{a},{}", quadrant_survival_analytic(p.rho, p.tau, x, y, 100_001)?.value);
    }
    Ok(())
}

fn rectangle(cfg: &RunConfig, points: usize) -> Result<()> {
    let p = RectangleProblem { l1: cfg.l1, l2: cfg.l2, rho: cfg.bm_rho, tau: cfg.tau, modes: cfg.bm_modes };
    let grid = Grid2D::new(Grid1D::uniform(0.0, p.l1, cfg.i1 - 1)?, Grid1D::uniform(0.0, p.l2, cfg.i2 - 1)?);
    let u = rectangle_adi(&p, &grid, cfg.n, cfg.scheme()?)?;
    let ex = rectangle_expansion(&p, cfg.order)?;
    let y = 0.5 * p.l2;
    println!("x1,x2,adi,expansion");
    for x in harness::probe_line(0.0, p.l1, points) {
        let a = qlsv::interp::cubic2(&grid.x1.nodes, &grid.x2.nodes, &u, x, y);
        println!("{x},{y},{a},{}", ex.value(x, y, cfg.order));
    }
    Ok(())
}

fn bench(cfg: &RunConfig, experiment: Option<String>, list: bool, out: Option<PathBuf>, check: bool, timing: bool) -> Result<()> {
    if list {
        for e in EXPERIMENTS {
            println!("{:10} criterion {:2}  {}", e.id, e.criterion, e.summary);
        }
        return Ok(());
    }
    let Some(id) = experiment else { bail!("--experiment or --list is required") };
    let ids: Vec<&str> = if id == "all" { harness::experiment_ids().collect() } else { vec![id.as_str()] };
    let mut failed = false;
    for id in ids {
        let table = harness::run_experiment(id, cfg)?;
        match &out {
            Some(dir) => table.save(dir, timing)?,
            None => table.write_csv(std::io::stdout(), timing)?,
        }
        for (m, s) in &table.slopes {
            eprintln!("{id} {m}: slope {s}");
        }
        for c in &table.checks {
            eprintln!("{id} [{}] {}: {}", if c.pass { "pass" } else { "FAIL" }, c.label, c.detail);
        }
        eprintln!("{id} took {:.1}s", table.seconds);
        failed |= !table.passed();
    }
    if check && failed {
        std::process::exit(1);
    }
    Ok(())
}
