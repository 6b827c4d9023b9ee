//! Batch front end: `solve`, `sweep`, `map` and `compare`.
//!
//! Settings come from defaults, then an optional `key = value` file, then
//! command-line flags. Keys mirror [`SolverConfig`] field names plus the
//! run keys listed in [`RunConfig::set`].

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::diagnostics::{self, DiagnosticsRecord, ReferenceSamples};
use crate::dynamics::{DmkSolver, DmkState, References, RunOutcome, SolverConfig, StopReason};
use crate::io::{create_dir, read_text, write_atomic};
use crate::mesh::Triangulation;
use crate::oracle::{initial_density, Problem};
use crate::otmap::{self, AtomicMeasure, MapEntry, MapFlag, SinkhornOptions, TraceOptions, VelocityField};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "dmk", version, about = "Dynamic Monge-Kantorovich solver for L1 optimal transport")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Subcommand, Debug)]
pub enum CliCommand {
    /// Run the dynamics to steady state.
    Solve(RunArgs),
    /// Solve on successive refinements and report convergence rates.
    Sweep(RunArgs),
    /// Solve, then trace the transport map from the source cells.
    Map(RunArgs),
    /// Solve, trace, and compare with the Sinkhorn barycentric map.
    Compare(RunArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// `key = value` settings file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// tc1-cont, tc1-cost, tc2 or tc3.
    #[arg(long, value_name = "NAME")]
    pub problem: Option<String>,
    /// Divisions per side of the generated square mesh.
    #[arg(long, value_name = "N")]
    pub divisions: Option<usize>,
    /// Mesh file in place of the problem's own mesh.
    #[arg(long, value_name = "PATH")]
    pub mesh: Option<PathBuf>,
    /// Number of mesh levels (uniform refinements plus one).
    #[arg(long, value_name = "K")]
    pub levels: Option<usize>,
    /// explicit or implicit.
    #[arg(long)]
    pub scheme: Option<String>,
    /// p1h2-p0h, p1h-p0h, p1h-p1h or p1h2-p1h.
    #[arg(long)]
    pub pairing: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Any other setting, as in the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Sweep,
    Map,
    Compare,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MeshSource {
    /// The problem's own mesh; square grids use this many divisions.
    Divisions(usize),
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub problem: Option<Problem>,
    pub mesh: MeshSource,
    pub levels: usize,
    pub solver: SolverConfig,
    pub out: PathBuf,
    pub initial_density: u8,
    pub rk4_steps: usize,
    pub denominator_floor: f64,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            problem: None,
            mesh: MeshSource::Divisions(16),
            levels: 1,
            solver: SolverConfig::default(),
            out: PathBuf::from("out"),
            initial_density: 1,
            rk4_steps: otmap::DEFAULT_RK4_STEPS,
            denominator_floor: otmap::DEFAULT_DENOMINATOR_FLOOR,
            sinkhorn_epsilon: 8e-4,
            sinkhorn_tol: 1e-9,
            sinkhorn_max_iter: SinkhornOptions::default().max_iter,
        }
    }

    /// Applies one setting. Run keys: `problem`, `divisions`, `mesh`,
    /// `levels`, `out`, `initial_density`, `rk4_steps`,
    /// `denominator_floor`, `sinkhorn_epsilon`, `sinkhorn_tol`,
    /// `sinkhorn_max_iter`; every other key names a solver setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Error> {
            value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        let s = &mut self.solver;
        match key {
            "problem" => self.problem = Some(Problem::by_name(value)?),
            "divisions" => self.mesh = MeshSource::Divisions(num(key, value)?),
            "mesh" => self.mesh = MeshSource::File(PathBuf::from(value)),
            "levels" => self.levels = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "initial_density" => self.initial_density = num(key, value)?,
            "rk4_steps" => self.rk4_steps = num(key, value)?,
            "denominator_floor" => self.denominator_floor = num(key, value)?,
            "sinkhorn_epsilon" => self.sinkhorn_epsilon = num(key, value)?,
            "sinkhorn_tol" => self.sinkhorn_tol = num(key, value)?,
            "sinkhorn_max_iter" => self.sinkhorn_max_iter = num(key, value)?,
            "scheme" => s.scheme = value.parse().map_err(Error::Config)?,
            "pairing" => s.pairing = value.parse().map_err(Error::Config)?,
            "dt0" => s.dt0 = num(key, value)?,
            "dt_max" => s.dt_max = num(key, value)?,
            "dt_growth" => s.dt_growth = num(key, value)?,
            "tol_picard" => s.tol_picard = num(key, value)?,
            "max_picard" => s.max_picard = num(key, value)?,
            "tol_time" => s.tol_time = num(key, value)?,
            "tol_pcg" => s.tol_pcg = num(key, value)?,
            "pcg_max_iter" => s.pcg_max_iter = num(key, value)?,
            "ic_drop_tolerance" => s.ic_drop_tolerance = num(key, value)?,
            "tdens_floor" => s.tdens_floor = num(key, value)?,
            "t_max" => s.t_max = num(key, value)?,
            "step_max" => s.step_max = num(key, value)?,
            "refresh_every" => s.refresh_every = num(key, value)?,
            "refresh_ratio" => s.refresh_ratio = num(key, value)?,
            "max_dt_halvings" => s.max_dt_halvings = num(key, value)?,
            "quadrature_order" => s.quadrature_order = num(key, value)?,
            "saturation_fraction" => s.saturation_fraction = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), Error> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("configuration: "))))?;
        }
        Ok(())
    }

    pub fn from_args(command: Command, args: &RunArgs) -> Result<Self, Error> {
        let mut cfg = RunConfig::new(command);
        if let Some(path) = &args.config {
            cfg.apply_text(&read_text(path)?)?;
        }
        let flags = [
            ("problem", args.problem.clone()),
            ("divisions", args.divisions.map(|d| d.to_string())),
            ("mesh", args.mesh.as_ref().map(|p| p.display().to_string())),
            ("levels", args.levels.map(|l| l.to_string())),
            ("scheme", args.scheme.clone()),
            ("pairing", args.pairing.clone()),
            ("out", args.out.as_ref().map(|p| p.display().to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        for kv in &args.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.problem.is_none() {
            return Err(Error::Config("no problem given (valid: tc1-cont, tc1-cost, tc2, tc3)".into()));
        }
        if self.levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if let MeshSource::Divisions(0) = self.mesh {
            return Err(Error::Config("divisions must be positive".into()));
        }
        if self.command == Command::Sweep && self.levels < 2 {
            return Err(Error::Config("sweep needs at least 2 levels".into()));
        }
        if self.rk4_steps == 0 {
            return Err(Error::Config("rk4_steps must be positive".into()));
        }
        if !(1..=3).contains(&self.initial_density) {
            return Err(Error::Config(format!("initial_density must be 1, 2 or 3, got {}", self.initial_density)));
        }
        self.solver.validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn problem(&self) -> &Problem {
        self.problem.as_ref().expect("validated")
    }

    /// Coarsest mesh of the run.
    pub fn base_mesh(&self) -> Result<Triangulation, Error> {
        Ok(match &self.mesh {
            MeshSource::Divisions(n) => self.problem().natural_mesh(*n)?,
            MeshSource::File(path) => Triangulation::parse(&read_text(path)?)?,
        })
    }

    /// Meshes of all levels, coarsest first.
    pub fn level_meshes(&self) -> Result<Vec<Triangulation>, Error> {
        let mut meshes = vec![self.base_mesh()?];
        for _ in 1..self.levels {
            let next = meshes.last().unwrap().refine_uniform();
            meshes.push(next);
        }
        Ok(meshes)
    }
}

/// Steady state of one level with everything written about it.
pub struct SolveResult {
    pub solver: DmkSolver,
    pub state: DmkState,
    pub reason: StopReason,
    pub history: Vec<DiagnosticsRecord>,
    pub h: f64,
    /// Set when the run stopped on an error; the history is partial.
    pub failure: Option<String>,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.failure.is_none() && self.reason == StopReason::Steady
    }

    pub fn last(&self) -> &DiagnosticsRecord {
        self.history.last().expect("history holds the initial record")
    }
}

fn summary_text(entries: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in entries {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x:.10e}"))
}

/// Runs one level and writes `diagnostics.csv`, `tdens.txt`, `pot.txt` and
/// `summary.txt` into `dir`. A failed run still writes its partial history.
pub fn solve_level(cfg: &RunConfig, mesh: Triangulation, dir: &Path) -> Result<SolveResult, Error> {
    create_dir(dir)?;
    let problem = cfg.problem();
    let h = mesh.max_edge_length();
    let mut solver = DmkSolver::for_problem(problem, mesh, cfg.solver.clone())?;
    let disc = solver.discretization();
    let tdens0 = initial_density(cfg.initial_density, disc.density_space(), disc.coarse())?.coeffs;
    let refs = References {
        density: if problem.has_exact_density() {
            Some(ReferenceSamples::new(disc, |p| problem.exact_density(p).unwrap_or(0.0), cfg.solver.quadrature_order)?)
        } else {
            None
        },
        w1: problem.exact_w1(),
    };
    let state = solver.initial_state(tdens0)?;
    let mut history = Vec::new();
    let mut last_state = state.clone();
    let outcome = solver.run_to_steady(state, &refs, |st, rec| {
        history.push(rec.clone());
        if st.step % 500 == 0 {
            last_state = st.clone();
        }
    });
    write_atomic(&dir.join("diagnostics.csv"), &diagnostics::history_csv(&history))?;
    let (state, reason, failure) = match outcome {
        Ok(RunOutcome { state, reason, .. }) => (state, reason, None),
        Err(e) => (last_state, StopReason::StepLimit, Some(e.to_string())),
    };
    let result = SolveResult { solver, state, reason, history, h, failure };
    let disc = result.solver.discretization();
    let dump = |coeffs: &[f64], space| crate::fem::Field::new(space, coeffs.to_vec()).to_dump();
    write_atomic(&dir.join("tdens.txt"), &dump(&result.state.tdens, disc.density_space()))?;
    write_atomic(&dir.join("pot.txt"), &dump(&result.state.pot, disc.potential_space()))?;
    let last = result.last();
    let grad_max = disc.gradient_magnitude(&result.state.pot).into_iter().fold(0.0, f64::max);
    write_atomic(
        &dir.join("summary.txt"),
        &summary_text(&[
            ("problem", problem.name().to_string()),
            ("pairing", cfg.solver.pairing.to_string()),
            ("scheme", cfg.solver.scheme.to_string()),
            ("triangles", result.solver.discretization().coarse().triangle_count().to_string()),
            ("h", format!("{h:.10e}")),
            ("stop", format!("{:?}", result.reason)),
            ("failure", result.failure.clone().unwrap_or_else(|| "none".into())),
            ("steps", result.state.step.to_string()),
            ("time", format!("{:.10e}", result.state.time)),
            ("lyapunov", format!("{:.15e}", last.lyapunov)),
            ("var", format!("{:.6e}", last.var)),
            ("err_tdens", opt(last.err_tdens)),
            ("err_wass", opt(last.err_wass)),
            ("max_tdens", format!("{:.10e}", result.state.tdens.iter().copied().fold(0.0, f64::max))),
            ("max_grad", format!("{grad_max:.10e}")),
            ("stagnated_solves", result.solver.stagnated_solves.to_string()),
            ("jacobi_fallbacks", result.solver.jacobi_fallbacks.to_string()),
        ]),
    )?;
    Ok(result)
}

fn not_converged(r: &SolveResult, what: &str) -> Error {
    Error::NonConvergence(match &r.failure {
        Some(f) => format!("{what}: {f}"),
        None => format!("{what}: stopped by {:?} after {} steps", r.reason, r.state.step),
    })
}

/// Solves, writes, and returns the result; non-convergence is an error
/// raised after the files are written.
pub fn run_solve(cfg: &RunConfig) -> Result<SolveResult, Error> {
    create_dir(&cfg.out)?;
    let mesh = cfg.level_meshes()?.pop().expect("at least one level");
    let r = solve_level(cfg, mesh, &cfg.out)?;
    if !r.converged() {
        return Err(not_converged(&r, "solve"));
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub h: Vec<f64>,
    pub err_tdens: Vec<Option<f64>>,
    pub err_wass: Vec<Option<f64>>,
    pub tdens_rate: Option<f64>,
    pub tdens_pairwise: Vec<f64>,
    pub wass_rate: Option<f64>,
    pub wass_pairwise: Vec<f64>,
}

pub fn run_sweep(cfg: &RunConfig) -> Result<SweepReport, Error> {
    create_dir(&cfg.out)?;
    let mut rows = Vec::new();
    let mut failed = None;
    for (k, mesh) in cfg.level_meshes()?.into_iter().enumerate() {
        let r = solve_level(cfg, mesh, &cfg.out.join(format!("level{k}")))?;
        if !r.converged() && failed.is_none() {
            failed = Some(not_converged(&r, &format!("level {k}")));
        }
        rows.push((r.h, r.last().err_tdens, r.last().err_wass, r.state.step, r.last().lyapunov));
    }
    let h: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let collect = |v: Vec<Option<f64>>| -> Option<Vec<f64>> { v.into_iter().map(|e| e.map(f64::abs)).collect() };
    let et = collect(rows.iter().map(|r| r.1).collect());
    let ew = collect(rows.iter().map(|r| r.2).collect());
    let report = SweepReport {
        h: h.clone(),
        err_tdens: rows.iter().map(|r| r.1).collect(),
        err_wass: rows.iter().map(|r| r.2).collect(),
        tdens_rate: et.as_ref().and_then(|e| diagnostics::convergence_rate(&h, e)),
        tdens_pairwise: et.as_ref().map(|e| diagnostics::pairwise_rates(&h, e)).unwrap_or_default(),
        wass_rate: ew.as_ref().and_then(|e| diagnostics::convergence_rate(&h, e)),
        wass_pairwise: ew.as_ref().map(|e| diagnostics::pairwise_rates(&h, e)).unwrap_or_default(),
    };
    let mut csv = String::from("level,h,steps,lyapunov,err_tdens,err_wass\n");
    for (k, r) in rows.iter().enumerate() {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        let _ = writeln!(csv, "{k},{:.17e},{},{:.17e},{},{}", r.0, r.3, r.4, cell(r.1), cell(r.2));
    }
    write_atomic(&cfg.out.join("sweep.csv"), &csv)?;
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ");
    write_atomic(
        &cfg.out.join("rates.txt"),
        &summary_text(&[
            ("err_tdens_rate", report.tdens_rate.map_or("none".into(), |r| format!("{r:.6}"))),
            ("err_tdens_pairwise", list(&report.tdens_pairwise)),
            ("err_wass_rate", report.wass_rate.map_or("none".into(), |r| format!("{r:.6}"))),
            ("err_wass_pairwise", list(&report.wass_pairwise)),
        ]),
    )?;
    match failed {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Map statistics written to `map_summary.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct MapReport {
    pub seeds: usize,
    pub flagged: usize,
    /// Unflagged endpoints within `h` of the sink support.
    pub hit_fraction: f64,
    /// Unflagged trajectories with path/chord ratio ≤ 1.05.
    pub straight_fraction: f64,
    pub h: f64,
}

fn source_atoms(cfg: &RunConfig, r: &SolveResult) -> Result<AtomicMeasure, Error> {
    let problem = cfg.problem().clone();
    Ok(AtomicMeasure::from_density(r.solver.discretization().coarse(), move |p| problem.source(p), cfg.solver.quadrature_order)?)
}

fn trace(cfg: &RunConfig, r: &SolveResult, seeds: &[crate::mesh::Point]) -> Result<(VelocityField, Vec<MapEntry>), Error> {
    let disc = r.solver.discretization();
    let mut vf = VelocityField::from_problem(disc, &r.state.tdens, &r.state.pot, cfg.problem())?;
    vf.denominator_floor = cfg.denominator_floor;
    let opts = TraceOptions::for_field(&vf, cfg.rk4_steps);
    let map = otmap::trace_map(&vf, seeds, &opts);
    Ok((vf, map))
}

fn map_report(cfg: &RunConfig, map: &[MapEntry], h: f64) -> MapReport {
    let ok: Vec<&MapEntry> = map.iter().filter(|e| e.flag == MapFlag::Ok).collect();
    let frac = |n: usize| if ok.is_empty() { 0.0 } else { n as f64 / ok.len() as f64 };
    MapReport {
        seeds: map.len(),
        flagged: map.len() - ok.len(),
        hit_fraction: frac(ok.iter().filter(|e| cfg.problem().distance_to_sink(e.end) <= h).count()),
        straight_fraction: frac(ok.iter().filter(|e| e.straightness() <= 1.05).count()),
        h,
    }
}

fn write_map_summary(path: &Path, m: &MapReport) -> Result<(), Error> {
    write_atomic(
        path,
        &summary_text(&[
            ("seeds", m.seeds.to_string()),
            ("flagged", m.flagged.to_string()),
            ("h", format!("{:.10e}", m.h)),
            ("hit_fraction", format!("{:.6}", m.hit_fraction)),
            ("straight_fraction", format!("{:.6}", m.straight_fraction)),
        ]),
    )
}

pub fn run_map(cfg: &RunConfig) -> Result<MapReport, Error> {
    let r = run_solve(cfg)?;
    let seeds = source_atoms(cfg, &r)?.points;
    let (_, map) = trace(cfg, &r, &seeds)?;
    write_atomic(&cfg.out.join("map.csv"), &otmap::map_csv(&map))?;
    let report = map_report(cfg, &map, r.h);
    write_map_summary(&cfg.out.join("map_summary.txt"), &report)?;
    Ok(report)
}

pub fn run_compare(cfg: &RunConfig) -> Result<otmap::MapComparison, Error> {
    let r = run_solve(cfg)?;
    let mu = source_atoms(cfg, &r)?;
    let problem = cfg.problem().clone();
    let nu = AtomicMeasure::from_density(r.solver.discretization().coarse(), move |p| problem.sink(p), cfg.solver.quadrature_order)?
        .rescaled(mu.total_mass());
    let (vf, dmk_map) = trace(cfg, &r, &mu.points)?;
    let opts = SinkhornOptions { max_iter: cfg.sinkhorn_max_iter, tol: cfg.sinkhorn_tol, epsilon_scaling: true };
    let plan = otmap::sinkhorn_plan(&mu, &nu, cfg.sinkhorn_epsilon, &opts)?;
    let bary = otmap::barycentric_map(&plan, &mu.points, &nu.points)?;
    let near = otmap::near_partition_boundary(&vf, &mu.points, cfg.solver.tdens_floor, 10.0);
    let cmp = otmap::compare_maps(&dmk_map, &bary, &near)?;
    write_atomic(&cfg.out.join("map_dmk.csv"), &otmap::map_csv(&dmk_map))?;
    write_atomic(&cfg.out.join("map_sinkhorn.csv"), &otmap::map_csv(&bary))?;
    write_atomic(&cfg.out.join("plan.txt"), &plan.to_dump())?;
    write_map_summary(&cfg.out.join("map_summary.txt"), &map_report(cfg, &dmk_map, r.h))?;
    let stats = |s: &otmap::DistanceStats| format!("{} {:.10e} {:.10e} {:.10e}", s.count, s.mean, s.median, s.max);
    write_atomic(
        &cfg.out.join("comparison.txt"),
        &summary_text(&[
            ("h", format!("{:.10e}", r.h)),
            ("sinkhorn_epsilon", format!("{:e}", cfg.sinkhorn_epsilon)),
            ("sinkhorn_converged", plan.converged.to_string()),
            ("sinkhorn_iterations", plan.iterations.to_string()),
            ("sinkhorn_marginal_error", format!("{:.3e}", plan.marginal_error)),
            ("sinkhorn_cost", format!("{:.10e}", plan.cost(&mu, &nu))),
            ("dmk_lyapunov", format!("{:.10e}", r.last().lyapunov)),
            ("# fields", "count mean median max".into()),
            ("away_from_gamma", stats(&cmp.away)),
            ("near_gamma", stats(&cmp.near)),
            ("flagged", cmp.flagged.to_string()),
        ]),
    )?;
    Ok(cmp)
}

pub fn exit_code(e: &Error) -> i32 {
    use crate::dynamics::DmkError;
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Config(_) | Error::Oracle(_) | Error::Mesh(_) => EXIT_CONFIG,
        Error::Dmk(DmkError::Config(_) | DmkError::InitialDensity { .. }) => EXIT_CONFIG,
        _ => EXIT_NOT_CONVERGED,
    }
}

fn describe(cfg: &RunConfig) -> String {
    format!("{} {} {}", cfg.problem().name(), cfg.solver.pairing, cfg.solver.scheme)
}

/// Parses `args` (program name first), runs, prints a short report, and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (command, args) = match &cli.command {
        CliCommand::Solve(a) => (Command::Solve, a),
        CliCommand::Sweep(a) => (Command::Sweep, a),
        CliCommand::Map(a) => (Command::Map, a),
        CliCommand::Compare(a) => (Command::Compare, a),
    };
    let result = RunConfig::from_args(command, args).and_then(|cfg| {
        let what = describe(&cfg);
        match command {
            Command::Solve => run_solve(&cfg).map(|r| {
                let l = r.last();
                format!("{what}: steady after {} steps, S = {:.10}, Var = {:.3e}", r.state.step, l.lyapunov, l.var)
            }),
            Command::Sweep => run_sweep(&cfg).map(|s| {
                let rate = |r: Option<f64>| r.map_or("n/a".to_string(), |r| format!("{r:.3}"));
                format!(
                    "{what}: density error rate {} (pairwise {:?}), W1 error rate {}",
                    rate(s.tdens_rate),
                    s.tdens_pairwise,
                    rate(s.wass_rate)
                )
            }),
            Command::Map => run_map(&cfg).map(|m| {
                format!(
                    "{what}: {} seeds, {} flagged, {:.1}% end within h of the sink, {:.1}% straight",
                    m.seeds,
                    m.flagged,
                    100.0 * m.hit_fraction,
                    100.0 * m.straight_fraction
                )
            }),
            Command::Compare => run_compare(&cfg).map(|c| {
                format!(
                    "{what}: median endpoint distance {:.4e} over {} seeds ({} near the partition boundary, {} flagged)",
                    c.away.median, c.away.count, c.near.count, c.flagged
                )
            }),
        }
    });
    match result {
        Ok(msg) => {
            println!("{msg}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
