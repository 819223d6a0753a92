//! Command line front end: parses a run configuration, dispatches to the
//! owning module and writes its artifacts plus a run manifest.
//!
//! Exit status is 0 on success, 2 for configuration and I/O problems and 3
//! for domain errors, which are reported by their stable error name.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use crate::curves::{self, ClosedCurve};
use crate::error::{Error, Result};
use crate::flow::{self, FlowOptions, FlowState, TrajectoryRow};
use crate::hypotheses::{self, HypothesisReport};
use crate::metric::{ConformalMetric, Family};
use crate::minimizer::{self, MinimizeOptions, StartFamily};
use crate::ricci::{self, RicciOptions};

#[derive(Debug, Parser)]
#[command(name = "isoflow", version, about = "Isoperimetric ratio minimization for conformal metrics on the plane")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Check,
    Ratio,
    Flow,
    Minimize,
    Ricci,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decay conditions and threshold constants for cusp envelopes.
    Check(RunConfig),
    /// Length, areas and isoperimetric ratio of a curve.
    Ratio(RunConfig),
    /// Curve shortening reduction of a curve, with its trajectory.
    Flow(RunConfig),
    /// Multi-start search for the least ratio.
    Minimize(RunConfig),
    /// Radial logarithmic diffusion and its time slices.
    Ricci(RunConfig),
}

impl Command {
    fn split(&self) -> (CommandKind, &RunConfig) {
        match self {
            Command::Check(c) => (CommandKind::Check, c),
            Command::Ratio(c) => (CommandKind::Ratio, c),
            Command::Flow(c) => (CommandKind::Flow, c),
            Command::Minimize(c) => (CommandKind::Minimize, c),
            Command::Ricci(c) => (CommandKind::Ricci, c),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunConfig {
    /// `sphere`, `cusp`, `flat`, `two-bump`, inline family JSON, or a path to a family JSON file.
    #[arg(long, default_value = "sphere")]
    pub metric: String,
    /// Curve CSV with header `x,y`.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Directory receiving the artifacts.
    #[arg(long, default_value = "isoflow-out")]
    pub out: PathBuf,
    /// Seed of the start jitter.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Start radii per center.
    #[arg(long)]
    pub starts: Option<usize>,
    /// Relative jitter of start circles.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Lower decay constant; also the cusp metric coefficient.
    #[arg(long)]
    pub c1: Option<f64>,
    /// Upper decay constant; defaults to `--c1`.
    #[arg(long)]
    pub c2: Option<f64>,
    /// Final diffusion time; defaults to three quarters of the predicted extinction time.
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Tolerance on the constant-curvature residual.
    #[arg(long)]
    pub el_tol: Option<f64>,
    /// Curvature energy the reduction drives below.
    #[arg(long)]
    pub energy_cap: Option<f64>,
    /// Step budget of each flow run.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Vertex counts of the descent ladder, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    /// Radial cells of the diffusion solver.
    #[arg(long)]
    pub cells: Option<usize>,
    /// Slice times at which `ricci` also minimizes the ratio, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub track: Option<Vec<f64>>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Parses the metric argument.
pub fn parse_metric(name: &str, c1: Option<f64>) -> Result<ConformalMetric> {
    let family = match name {
        "sphere" => Family::RoundSphere { scale: 1.0, center: [0.0, 0.0] },
        "cusp" => Family::CuspProfile { c: c1.unwrap_or(1.0), r_cap: std::f64::consts::E },
        "flat" => Family::Flat { c: 1.0 },
        "two-bump" => Family::Sum {
            terms: vec![
                Family::RoundSphere { scale: 1.0, center: [-3.0, 0.0] },
                Family::RoundSphere { scale: 1.0, center: [3.0, 0.0] },
            ],
        },
        s if s.trim_start().starts_with('{') => serde_json::from_str(s)?,
        path => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("metric {path:?} is neither a known name nor a readable file: {e}")))?;
            serde_json::from_str(&text)?
        }
    };
    ConformalMetric::from_family(family)
}

fn load_curve(cfg: &RunConfig) -> Result<ClosedCurve> {
    let path = cfg.curve.as_ref().ok_or_else(|| Error::Config("this command needs --curve".into()))?;
    ClosedCurve::from_csv_path(path)
}

fn flow_options(cfg: &RunConfig) -> FlowOptions {
    let mut o = FlowOptions::default();
    if let Some(c) = cfg.energy_cap {
        o.curvature_energy_cap = c;
    }
    if let Some(t) = cfg.el_tol {
        o.el_tolerance = t;
    }
    if let Some(n) = cfg.max_steps {
        o.max_steps = n;
    }
    o
}

fn minimize_options(cfg: &RunConfig) -> MinimizeOptions {
    let mut o = MinimizeOptions { flow: flow_options(cfg), ..Default::default() };
    if let Some(l) = &cfg.levels {
        o.levels = l.clone();
    }
    o
}

fn start_family(cfg: &RunConfig, opts: &MinimizeOptions) -> StartFamily {
    let mut f = StartFamily { jitter: cfg.jitter, seed: cfg.seed, ..Default::default() };
    if let Some(n) = cfg.starts {
        f.n_radii = n;
    }
    if let Some(&n) = opts.levels.last() {
        f.vertices = n;
    }
    f
}

/// Collects artifact files in the output directory.
struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        Ok(Artifacts { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        use std::io::Write;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn curve(&mut self, name: &str, curve: &ClosedCurve) -> Result<()> {
        let mut w = self.create(name)?;
        curve.write_csv(&mut w)?;
        use std::io::Write;
        w.flush()?;
        Ok(())
    }
}

fn run_check(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let metric = parse_metric(&cfg.metric, cfg.c1)?;
    let mut report: HypothesisReport = match (cfg.c1, cfg.c2) {
        (Some(c1), c2) => hypotheses::cusp_report(c1, c2.unwrap_or(c1))?,
        (None, Some(_)) => return Err(Error::Config("--c2 needs --c1".into())),
        (None, None) => {
            let env = metric
                .envelope()
                .ok_or_else(|| Error::DomainError("metric has no radial envelope; pass --c1 and --c2".into()))?;
            hypotheses::envelope_report(env)?
        }
    };
    if let Ok(a) = metric.total_area() {
        if a.is_finite() {
            report = report.with_area(a);
        }
    }
    out.json("report.json", &report)?;
    let mut w = out.create("margins.csv")?;
    report.write_margins_csv(&mut w)?;
    println!(
        "c0 = {:.15e}, delta = {:.15e}, b1 = {:.15e}, b2 = {:.15e}, r0 = {:.15e}, all conditions pass: {}",
        report.c0,
        report.delta,
        report.b1,
        report.b2,
        report.r0,
        report.all_pass()
    );
    Ok(())
}

fn run_ratio(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let metric = parse_metric(&cfg.metric, cfg.c1)?;
    let curve = load_curve(cfg)?;
    let m = curves::isoperimetric_ratio(&curve, &metric)?;
    out.json("ratio.json", &m)?;
    println!("I = {:.15}", m.ratio);
    println!("L = {:.15}, A_in = {:.15}, A_out = {:.15}", m.length_g, m.area_in, m.area_out);
    Ok(())
}

fn run_flow(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let metric = parse_metric(&cfg.metric, cfg.c1)?;
    let curve = load_curve(cfg)?;
    let opts = flow_options(cfg);
    let mut rows: Vec<TrajectoryRow> = Vec::new();
    let mut last: Option<FlowState> = None;
    let result = flow::reduce_with(&curve, &metric, &opts, &mut |s| {
        rows.push(s.into());
        last = Some(s.clone());
    });
    let mut w = out.create("trajectory.csv")?;
    flow::write_trajectory(&mut w, &rows)?;
    if let Some(s) = &last {
        out.curve("final_curve.csv", &s.curve)?;
    }
    let (status, error) = match &result {
        Ok(s) => (format!("{:?}", s.status), None),
        Err(e) => (e.name().to_string(), Some(e.to_string())),
    };
    out.json(
        "flow.json",
        &json!({
            "status": status,
            "error": error,
            "steps": last.as_ref().map(|s| s.step_count),
            "tau": last.as_ref().map(|s| s.tau),
            "initial": rows.first().map(|r| r.metrics),
            "final": last.as_ref().map(|s| s.metrics),
        }),
    )?;
    let s = result?;
    println!("{:?} after {} steps: I = {:.15}, energy = {:.15}", s.status, s.step_count, s.metrics.ratio, s.metrics.curvature_energy);
    Ok(())
}

fn run_minimize(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let metric = parse_metric(&cfg.metric, cfg.c1)?;
    let opts = minimize_options(cfg);
    let family = start_family(cfg, &opts);
    let report = match metric.envelope() {
        Some(env) => Some(hypotheses::envelope_report(env)?),
        None => None,
    };
    let res = minimizer::minimize(&metric, &family, &opts, report.as_ref())?;
    out.curve("best_curve.csv", &res.best_curve)?;
    out.json(
        "minimize.json",
        &json!({
            "best_ratio": res.best_ratio,
            "el_residual": res.el_residual,
            "best_metrics": res.best_metrics,
            "best_start": res.best_start,
            "split_applied": res.split_applied,
            "threshold_check": res.threshold_check,
            "constants": report.as_ref().map(|r| json!({"c0": r.c0, "delta": r.delta, "b1": r.b1, "b2": r.b2, "r0": r.r0})),
            "starts": res.starts_log,
        }),
    )?;
    println!("I = {:.15}, el_residual = {:.6e}", res.best_ratio, res.el_residual);
    Ok(())
}

fn run_ricci(cfg: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let u0 = parse_metric(&cfg.metric, cfg.c1)?;
    let m0 = u0.total_area()?;
    let t_end = cfg.t_end.unwrap_or(0.75 * m0 / (4.0 * std::f64::consts::PI));
    let mut opts = RicciOptions::default();
    if let Some(n) = cfg.cells {
        opts.cells = n;
    }
    let sol = ricci::solve_radial(&u0, t_end, &opts)?;
    let mut w = out.create("solution.csv")?;
    sol.write_solution_csv(&mut w)?;
    let mut w = out.create("mass.csv")?;
    sol.write_mass_csv(&mut w)?;
    let mut tracked: Vec<Value> = Vec::new();
    if let Some(times) = &cfg.track {
        let mopts = minimize_options(cfg);
        let family = StartFamily { centers: vec![[0.0, 0.0]], ..start_family(cfg, &mopts) };
        for (t, row) in times.iter().zip(ricci::track_ratio(&sol, times, &family, &mopts)) {
            tracked.push(match row {
                Ok(r) => serde_json::to_value(r)?,
                Err(e) => json!({"t": t, "error": e.name(), "message": e.to_string()}),
            });
        }
    }
    out.json(
        "ricci.json",
        &json!({
            "initial_mass": m0,
            "t_end": t_end,
            "extinction_estimate": sol.extinction_estimate,
            "predicted_extinction": m0 / (4.0 * std::f64::consts::PI),
            "mass_slope": sol.mass_slope,
            "fit_window": sol.fit_window,
            "tail_window": sol.tail_window,
            "not_maximal": sol.not_maximal,
            "initial_decay_constant": sol.initial_decay_constant,
            "steps": sol.steps,
            "track": tracked,
        }),
    )?;
    println!("extinction estimate = {:.15}, mass slope = {:.15}", sol.extinction_estimate, sol.mass_slope);
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io(_) => 2,
        _ => 3,
    }
}

/// Runs one command; returns the process exit status.
pub fn run(cli: &Cli) -> i32 {
    let (kind, cfg) = cli.command.split();
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            info!("worker pool already configured: {e}");
        }
    }
    let started = Instant::now();
    let mut out = match Artifacts::new(&cfg.out) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            return exit_code(&e);
        }
    };
    let result = match kind {
        CommandKind::Check => run_check(cfg, &mut out),
        CommandKind::Ratio => run_ratio(cfg, &mut out),
        CommandKind::Flow => run_flow(cfg, &mut out),
        CommandKind::Minimize => run_minimize(cfg, &mut out),
        CommandKind::Ricci => run_ricci(cfg, &mut out),
    };
    let manifest = json!({
        "command": kind,
        "config": cfg,
        "version": env!("CARGO_PKG_VERSION"),
        "status": result.as_ref().map_or_else(|e| e.name(), |_| "ok"),
        "artifacts": out.written.clone(),
        "timing": { "wall_seconds": started.elapsed().as_secs_f64() },
    });
    let written = out.json("manifest.json", &manifest);
    match result.and(written) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            exit_code(&e)
        }
    }
}

/// Entry point taking raw arguments; logging is controlled by `ISOFLOW_LOG`.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("ISOFLOW_LOG", "error")).try_init();
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_metrics() {
        assert!(parse_metric("sphere", None).unwrap().has_finite_area());
        assert!(!parse_metric("flat", None).unwrap().has_finite_area());
        assert!(parse_metric("cusp", Some(2.0)).unwrap().envelope().is_some());
        assert_eq!(parse_metric("two-bump", None).unwrap().term_centers().len(), 2);
        let m = parse_metric(r#"{"family": "round_sphere", "params": {"scale": 2.0}}"#, None).unwrap();
        assert!((m.total_area().unwrap() - 4.0 * std::f64::consts::PI).abs() < 1e-6);
        assert!(matches!(parse_metric("no-such-metric", None), Err(Error::Config(_))));
        assert!(matches!(parse_metric("{not json", None), Err(Error::Config(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::SelfIntersection(0, 2)), 3);
        assert_eq!(exit_code(&Error::StepUnstable(0.5)), 3);
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "isoflow", "minimize", "--metric", "sphere", "--seed", "7", "--starts", "3", "--levels", "64,128",
            "--el-tol", "0.05", "--energy-cap", "20", "--threads", "1", "--out", "x",
        ])
        .unwrap();
        let (kind, cfg) = cli.command.split();
        assert_eq!(kind, CommandKind::Minimize);
        assert_eq!(cfg.levels, Some(vec![64, 128]));
        let o = minimize_options(cfg);
        assert_eq!(o.flow.el_tolerance, 0.05);
        assert_eq!(o.flow.curvature_energy_cap, 20.0);
        assert_eq!(start_family(cfg, &o).vertices, 128);
        assert!(Cli::try_parse_from(["isoflow", "ratio", "--bogus"]).is_err());
    }
}
