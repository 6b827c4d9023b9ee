//! Python bindings for the `dmk` solver.
//!
//! Exposes meshes, test problems, the time-stepping solver, transport-map
//! extraction and the Sinkhorn/Weiszfeld comparison tools.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use dmk::cli::{Command, RunConfig};
use dmk::diagnostics::{self, DiagnosticsRecord, ReferenceSamples};
use dmk::dynamics::{DmkSolver, DmkState, References, StepReport};
use dmk::mesh::{Point, Triangulation};
use dmk::oracle::{initial_density, tc2_fixture_mesh, Problem};
use dmk::otmap::{self, AtomicMeasure, MapEntry, SinkhornOptions, TraceOptions, VelocityField};

create_exception!(dmk_py, DmkError, PyException);

fn err(e: impl Into<dmk::Error>) -> PyErr {
    let e = e.into();
    if dmk::cli::exit_code(&e) == dmk::cli::EXIT_CONFIG {
        PyValueError::new_err(e.to_string())
    } else {
        DmkError::new_err(e.to_string())
    }
}

/// Triangulation of a polygonal domain.
#[pyclass(name = "Mesh", module = "dmk_py", skip_from_py_object)]
#[derive(Clone)]
struct PyMesh {
    inner: Triangulation,
}

#[pymethods]
impl PyMesh {
    /// Unit square split into `divisions`² squares, two triangles each.
    #[staticmethod]
    fn square_grid(divisions: usize) -> PyResult<Self> {
        Ok(PyMesh { inner: Triangulation::square_grid(divisions).map_err(err)? })
    }

    /// Reads the `nodes triangles boundary` text format.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyMesh { inner: Triangulation::load(path).map_err(err)? })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyMesh { inner: Triangulation::parse(text).map_err(err)? })
    }

    /// The shipped circle-to-ellipse fixture.
    #[staticmethod]
    fn tc2_fixture() -> PyResult<Self> {
        Ok(PyMesh { inner: tc2_fixture_mesh().map_err(err)? })
    }

    fn refine(&self) -> Self {
        PyMesh { inner: self.inner.refine_uniform() }
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn triangle_count(&self) -> usize {
        self.inner.triangle_count()
    }

    fn nodes(&self) -> Vec<(f64, f64)> {
        self.inner.nodes().iter().map(|p| (p[0], p[1])).collect()
    }

    fn triangles(&self) -> Vec<(usize, usize, usize)> {
        self.inner.triangles().iter().map(|t| (t[0], t[1], t[2])).collect()
    }

    fn centroids(&self) -> Vec<(f64, f64)> {
        (0..self.inner.triangle_count()).map(|t| self.inner.centroid(t)).map(|p| (p[0], p[1])).collect()
    }

    fn max_edge_length(&self) -> f64 {
        self.inner.max_edge_length()
    }

    fn total_area(&self) -> f64 {
        self.inner.total_area()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("Mesh(nodes={}, triangles={})", self.inner.node_count(), self.inner.triangle_count())
    }
}

/// One of the test problems: `tc1-cont`, `tc1-cost`, `tc2`, `tc3`.
#[pyclass(name = "Problem", module = "dmk_py", skip_from_py_object)]
#[derive(Clone)]
struct PyProblem {
    inner: Problem,
}

#[pymethods]
impl PyProblem {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(PyProblem { inner: Problem::by_name(name).map_err(|e| PyValueError::new_err(e.to_string()))? })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn source(&self, x: f64, y: f64) -> f64 {
        self.inner.source([x, y])
    }

    fn sink(&self, x: f64, y: f64) -> f64 {
        self.inner.sink([x, y])
    }

    fn forcing(&self, x: f64, y: f64) -> f64 {
        self.inner.forcing([x, y])
    }

    /// Exact OT density where a closed form exists.
    fn exact_density(&self, x: f64, y: f64) -> Option<f64> {
        self.inner.exact_density([x, y])
    }

    #[getter]
    fn exact_w1(&self) -> Option<f64> {
        self.inner.exact_w1()
    }

    /// Aligned square grid, or the fixture for `tc2`.
    #[pyo3(signature = (divisions = 16))]
    fn natural_mesh(&self, divisions: usize) -> PyResult<PyMesh> {
        Ok(PyMesh { inner: self.inner.natural_mesh(divisions).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("Problem({:?})", self.inner.name())
    }
}

/// Per-step diagnostics.
#[pyclass(name = "Record", module = "dmk_py", get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyRecord {
    step: usize,
    time: f64,
    dt: f64,
    energy: f64,
    mass_half: f64,
    lyapunov: f64,
    var: f64,
    err_tdens: Option<f64>,
    err_wass: Option<f64>,
    pcg_iterations: usize,
    picard_iterations: usize,
    contraction: Option<f64>,
}

impl From<&DiagnosticsRecord> for PyRecord {
    fn from(r: &DiagnosticsRecord) -> Self {
        PyRecord {
            step: r.step,
            time: r.time,
            dt: r.dt,
            energy: r.energy,
            mass_half: r.mass_half,
            lyapunov: r.lyapunov,
            var: r.var,
            err_tdens: r.err_tdens,
            err_wass: r.err_wass,
            pcg_iterations: r.pcg_iterations,
            picard_iterations: r.picard_iterations,
            contraction: r.contraction,
        }
    }
}

#[pymethods]
impl PyRecord {
    fn __repr__(&self) -> String {
        format!("Record(step={}, time={:.4e}, lyapunov={:.10}, var={:.3e})", self.step, self.time, self.lyapunov, self.var)
    }
}

/// DMK time stepper bound to one problem and mesh.
///
/// Keyword settings use the configuration-file keys (`scheme`, `pairing`,
/// `dt0`, `tol_time`, ...).
#[pyclass(name = "Solver", module = "dmk_py")]
struct PySolver {
    solver: DmkSolver,
    state: DmkState,
    problem: Problem,
    refs: References,
    history: Vec<DiagnosticsRecord>,
}

fn setting_text(v: &Bound<'_, PyAny>) -> PyResult<String> {
    Ok(v.str()?.to_string())
}

#[pymethods]
impl PySolver {
    #[new]
    #[pyo3(signature = (problem, mesh, initial = 1, **settings))]
    fn new(problem: &PyProblem, mesh: &PyMesh, initial: u8, settings: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let mut cfg = RunConfig::new(Command::Solve);
        if let Some(kw) = settings {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                cfg.set(&key, &setting_text(&v)?).map_err(err)?;
            }
        }
        cfg.solver.validate().map_err(err)?;
        let problem = problem.inner.clone();
        let mut solver = DmkSolver::for_problem(&problem, mesh.inner.clone(), cfg.solver.clone()).map_err(err)?;
        let disc = solver.discretization();
        let tdens = initial_density(initial, disc.density_space(), disc.coarse()).map_err(err)?.coeffs;
        let refs = References {
            density: if problem.has_exact_density() {
                let p = problem.clone();
                Some(
                    ReferenceSamples::new(disc, move |x| p.exact_density(x).unwrap_or(0.0), cfg.solver.quadrature_order)
                        .map_err(err)?,
                )
            } else {
                None
            },
            w1: problem.exact_w1(),
        };
        let state = solver.initial_state(tdens).map_err(err)?;
        let first = solver.record(&state, &StepReport::default(), &refs, 0.0);
        Ok(PySolver { solver, state, problem, refs, history: vec![first] })
    }

    /// Advances one step and returns its record.
    fn step(&mut self) -> PyResult<PyRecord> {
        let report = self.solver.step(&mut self.state).map_err(err)?;
        let rec = self.solver.record(&self.state, &report, &self.refs, 0.0);
        let out = PyRecord::from(&rec);
        self.history.push(rec);
        Ok(out)
    }

    /// Steps to steady state; returns True when `Var < tol_time` was reached.
    fn run(&mut self, py: Python<'_>) -> PyResult<bool> {
        let state = self.state.clone();
        let solver = &mut self.solver;
        let refs = &self.refs;
        let outcome = py.detach(|| solver.run_to_steady(state, refs, |_, _| {})).map_err(err)?;
        self.history.extend(outcome.history.into_iter().skip(1));
        let converged = outcome.reason == dmk::dynamics::StopReason::Steady;
        self.state = outcome.state;
        Ok(converged)
    }

    fn history(&self) -> Vec<PyRecord> {
        self.history.iter().map(PyRecord::from).collect()
    }

    #[getter]
    fn time(&self) -> f64 {
        self.state.time
    }

    #[getter]
    fn steps(&self) -> usize {
        self.state.step
    }

    #[getter]
    fn tdens(&self) -> Vec<f64> {
        self.state.tdens.clone()
    }

    #[getter]
    fn pot(&self) -> Vec<f64> {
        self.state.pot.clone()
    }

    /// Projected gradient magnitude per coarse cell.
    fn gradient_magnitude(&self) -> Vec<f64> {
        self.solver.discretization().gradient_magnitude(&self.state.pot)
    }

    /// `(energy, mass_half, lyapunov)` of the current state.
    fn lyapunov(&self) -> (f64, f64, f64) {
        diagnostics::lyapunov(&self.state.tdens, &self.state.pot, self.solver.discretization())
    }

    fn coarse_mesh(&self) -> PyMesh {
        PyMesh { inner: self.solver.discretization().coarse().clone() }
    }

    /// Streamline map from `seeds` (default: source-cell centroids) as
    /// `(seed, end, flag, path_length)` tuples.
    #[pyo3(signature = (seeds = None, rk4_steps = otmap::DEFAULT_RK4_STEPS))]
    fn trace_map(
        &self,
        py: Python<'_>,
        seeds: Option<Vec<(f64, f64)>>,
        rk4_steps: usize,
    ) -> PyResult<Vec<EntryTuple>> {
        let disc = self.solver.discretization();
        let vf = VelocityField::from_problem(disc, &self.state.tdens, &self.state.pot, &self.problem).map_err(err)?;
        let seeds: Vec<Point> = match seeds {
            Some(s) => s.into_iter().map(|(x, y)| [x, y]).collect(),
            None => {
                let p = self.problem.clone();
                AtomicMeasure::from_density(disc.coarse(), move |x| p.source(x), self.solver.config().quadrature_order)
                    .map_err(err)?
                    .points
            }
        };
        let opts = TraceOptions::for_field(&vf, rk4_steps);
        let map = py.detach(|| otmap::trace_map(&vf, &seeds, &opts));
        Ok(map.iter().map(entry_tuple).collect())
    }
}

type EntryTuple = ((f64, f64), (f64, f64), u8, f64);

fn entry_tuple(e: &MapEntry) -> EntryTuple {
    ((e.seed[0], e.seed[1]), (e.end[0], e.end[1]), e.flag.code(), e.path_length)
}

fn measure(points: Vec<(f64, f64)>, weights: Vec<f64>) -> PyResult<AtomicMeasure> {
    AtomicMeasure::new(points.into_iter().map(|(x, y)| [x, y]).collect(), weights).map_err(err)
}

/// Entropic transport plan.
#[pyclass(name = "TransportPlan", module = "dmk_py", get_all)]
struct PyPlan {
    rows: usize,
    cols: usize,
    epsilon: f64,
    iterations: usize,
    marginal_error: f64,
    converged: bool,
    cost: f64,
    values: Vec<f64>,
}

#[pymethods]
impl PyPlan {
    fn matrix(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.cols).map(|r| r.to_vec()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "TransportPlan({}x{}, cost={:.10}, converged={})",
            self.rows,
            self.cols,
            self.cost,
            if self.converged { "True" } else { "False" }
        )
    }
}

/// Log-domain Sinkhorn between two atomic measures with Euclidean cost.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (source_points, source_weights, sink_points, sink_weights, epsilon = 8e-4, tol = 1e-9, max_iter = 200_000))]
fn sinkhorn(
    py: Python<'_>,
    source_points: Vec<(f64, f64)>,
    source_weights: Vec<f64>,
    sink_points: Vec<(f64, f64)>,
    sink_weights: Vec<f64>,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> PyResult<PyPlan> {
    let mu = measure(source_points, source_weights)?;
    let nu = measure(sink_points, sink_weights)?;
    let opts = SinkhornOptions { max_iter, tol, epsilon_scaling: true };
    let plan = py.detach(|| otmap::sinkhorn_plan(&mu, &nu, epsilon, &opts)).map_err(err)?;
    Ok(PyPlan {
        rows: plan.rows,
        cols: plan.cols,
        epsilon: plan.epsilon,
        iterations: plan.iterations,
        marginal_error: plan.marginal_error,
        converged: plan.converged,
        cost: plan.cost(&mu, &nu),
        values: plan.values,
    })
}

/// Weighted geometric median by Weiszfeld iteration.
#[pyfunction]
#[pyo3(signature = (points, weights, tol = 1e-10, max_iter = 1000))]
fn geometric_median(points: Vec<(f64, f64)>, weights: Vec<f64>, tol: f64, max_iter: usize) -> PyResult<(f64, f64)> {
    if points.len() != weights.len() {
        return Err(PyValueError::new_err("points and weights differ in length"));
    }
    let pts: Vec<Point> = points.into_iter().map(|(x, y)| [x, y]).collect();
    otmap::geometric_median(&pts, &weights, tol, max_iter)
        .map(|(p, _)| (p[0], p[1]))
        .ok_or_else(|| PyValueError::new_err("weights sum to zero"))
}

/// Least-squares slope of `log err` against `log h`.
#[pyfunction]
fn convergence_rate(h: Vec<f64>, err: Vec<f64>) -> Option<f64> {
    diagnostics::convergence_rate(&h, &err)
}

/// Runs the command-line front end; returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("dmk".to_string()).chain(args).collect();
    py.detach(|| dmk::cli::main_with_args(argv))
}

#[pymodule]
fn dmk_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DmkError", m.py().get_type::<DmkError>())?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PySolver>()?;
    m.add_class::<PyPlan>()?;
    m.add_function(wrap_pyfunction!(sinkhorn, m)?)?;
    m.add_function(wrap_pyfunction!(geometric_median, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_rate, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
